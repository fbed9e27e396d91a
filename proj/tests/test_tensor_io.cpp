#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <limits>

#include "nabla/rng.hpp"
#include "nabla/tensor.hpp"
#include "nabla/tensor_io.hpp"
#include "oracles.hpp"

using namespace nabla;

namespace {
std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}
}  // namespace

TEST_CASE("tensor shape validation", "[tensor_io]") {
    CHECK_THROWS_AS(Tensor::zeros({}), ValidationError);
    CHECK_THROWS_AS(Tensor::zeros({2, 2, 2, 2, 2}), ValidationError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), ValidationError);
    CHECK_THROWS_AS(Tensor::zeros({-1}), ValidationError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ValidationError);
    CHECK(Tensor::zeros({3, 4}).numel() == 12);
}

TEST_CASE("encode layout is fixed", "[tensor_io]") {
    const Tensor one({1}, {1.0f});
    const std::vector<uint8_t> bytes = encode_tensor(one);
    REQUIRE(bytes.size() == 24);  // 4+4+1+1+2 header, 8 dim, 4 payload
    CHECK(bytes[0] == 'N');
    CHECK(bytes[1] == 'T');
    CHECK(bytes[2] == 'S');
    CHECK(bytes[3] == 'R');
    CHECK(bytes[4] == 1);   // version, little endian
    CHECK(bytes[8] == 1);   // dtype f32
    CHECK(bytes[9] == 1);   // rank
    CHECK(bytes[10] == 0);  // reserved
    CHECK(bytes[11] == 0);
    CHECK(bytes[12] == 1);  // dim0
    // 1.0f little endian
    CHECK(bytes[20] == 0x00);
    CHECK(bytes[21] == 0x00);
    CHECK(bytes[22] == 0x80);
    CHECK(bytes[23] == 0x3f);
}

TEST_CASE("tensor round trip through file", "[tensor_io]") {
    Rng rng(7);
    Tensor t = Tensor::zeros({3, 5, 2});
    for (float& v : t.data) v = rng.uniform_f(-4.0f, 4.0f);
    const auto path = temp_file("nabla_roundtrip.ntsr");
    save_tensor(t, path.string());
    const Tensor back = load_tensor(path.string());
    CHECK(equal(t, back));
    std::filesystem::remove(path);
}

TEST_CASE("decode rejects malformed buffers", "[tensor_io]") {
    const Tensor t({2}, {1.0f, 2.0f});
    std::vector<uint8_t> good = encode_tensor(t);

    SECTION("bad magic") {
        auto bad = good;
        bad[0] = 'X';
        CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    }
    SECTION("bad version") {
        auto bad = good;
        bad[4] = 9;
        CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    }
    SECTION("bad dtype") {
        auto bad = good;
        bad[8] = 2;
        CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    }
    SECTION("bad rank") {
        auto bad = good;
        bad[9] = 5;
        CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    }
    SECTION("nonzero reserved bytes") {
        auto bad = good;
        bad[10] = 1;
        CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    }
    SECTION("truncated payload") {
        auto bad = good;
        bad.pop_back();
        CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    }
    SECTION("trailing garbage") {
        auto bad = good;
        bad.push_back(0);
        CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    }
    SECTION("zero extent") {
        auto bad = good;
        for (int i = 12; i < 20; ++i) bad[size_t(i)] = 0;
        CHECK_THROWS_AS(decode_tensor(bad), FormatError);
    }
}

TEST_CASE("non-finite payloads are rejected at the boundary", "[tensor_io]") {
    Tensor t({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(encode_tensor(t), ValidationError);

    Tensor inf_t({1}, {1.0f});
    std::vector<uint8_t> buf = encode_tensor(inf_t);
    buf[20] = 0x00;
    buf[21] = 0x00;
    buf[22] = 0x80;
    buf[23] = 0x7f;  // +inf
    CHECK_THROWS_AS(decode_tensor(buf), ValidationError);
}

TEST_CASE("load reports missing files", "[tensor_io]") {
    CHECK_THROWS_AS(load_tensor("/nonexistent/q.ntsr"), IoError);
}

TEST_CASE("golden tensor files decode and re-encode bit for bit", "[tensor_io]") {
    const std::string dir = NABLA_GOLDEN_DIR;

    const auto scalar_bytes = oracle::read_bytes(dir + "/scalar_one.ntsr");
    const Tensor scalar = decode_tensor(scalar_bytes);
    CHECK(scalar.shape == std::vector<int64_t>{1});
    CHECK(scalar.data == std::vector<float>{1.0f});
    CHECK(encode_tensor(scalar) == scalar_bytes);

    const auto zeros_bytes = oracle::read_bytes(dir + "/zero_2x3.ntsr");
    const Tensor zeros = decode_tensor(zeros_bytes);
    CHECK(zeros.shape == std::vector<int64_t>{2, 3});
    CHECK(zeros.data == std::vector<float>(6, 0.0f));
    CHECK(encode_tensor(zeros) == zeros_bytes);

    const auto ramp_bytes = oracle::read_bytes(dir + "/ramp_2x2x2.ntsr");
    const Tensor ramp = decode_tensor(ramp_bytes);
    CHECK(ramp.shape == std::vector<int64_t>{2, 2, 2});
    for (int i = 0; i < 8; ++i) CHECK(ramp.data[size_t(i)] == float(i) * 0.5f - 1.75f);
    CHECK(encode_tensor(ramp) == ramp_bytes);
}
