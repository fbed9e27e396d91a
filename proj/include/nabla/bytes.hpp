#pragma once

// Little-endian byte packing and whole-file helpers shared by the .ntsr
// and .nmsk writers. All multi-byte fields in both formats are little-endian
// regardless of host byte order.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nabla/errors.hpp"

namespace nabla::bytes {

inline void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 24));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline void put_f32(std::vector<uint8_t>& out, float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(out, u);
}

// Cursor over an in-memory buffer; throws FormatError on overrun so header
// parsing never reads past a truncated file.
class Reader {
public:
    Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
    explicit Reader(const std::vector<uint8_t>& buf) : Reader(buf.data(), buf.size()) {}

    size_t offset() const { return off_; }
    size_t remaining() const { return size_ - off_; }

    uint8_t u8() {
        need(1);
        return data_[off_++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(data_[off_ + i]) << (8 * i);
        off_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(data_[off_ + i]) << (8 * i);
        off_ += 8;
        return v;
    }
    float f32() {
        uint32_t u = u32();
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    }
    const uint8_t* raw(size_t n) {
        need(n);
        const uint8_t* p = data_ + off_;
        off_ += n;
        return p;
    }

private:
    void need(size_t n) const {
        if (off_ + n > size_) throw FormatError("unexpected end of file");
    }
    const uint8_t* data_;
    size_t size_;
    size_t off_ = 0;
};

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path);
    return buf;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(data.data()),
              std::streamsize(data.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace nabla::bytes
