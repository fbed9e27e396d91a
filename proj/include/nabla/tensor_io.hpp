#pragma once

// Bit-exact .ntsr tensor container.
//
// Layout, all multi-byte fields little-endian:
//   magic    : 4 bytes "NTSR"
//   version  : u32 = 1
//   dtype    : u8  = 1 (f32)
//   rank     : u8  in [1,4]
//   reserved : 2 zero bytes
//   dims     : rank x u64
//   payload  : 4 * product(dims) bytes of IEEE-754 f32
//
// Non-finite elements are rejected on both save and load so numeric errors
// surface at the I/O boundary instead of deep inside a kernel.

#include <cstdint>
#include <string>
#include <vector>

#include "nabla/bytes.hpp"
#include "nabla/errors.hpp"
#include "nabla/tensor.hpp"

namespace nabla {

constexpr uint32_t kTensorFormatVersion = 1;
constexpr uint8_t kDtypeF32 = 1;

inline std::vector<uint8_t> encode_tensor(const Tensor& t) {
    if (!t.all_finite())
        throw ValidationError("tensor contains non-finite elements");
    std::vector<uint8_t> out;
    out.reserve(size_t(12 + 8 * t.rank() + 4 * t.numel()));
    out.insert(out.end(), {'N', 'T', 'S', 'R'});
    bytes::put_u32(out, kTensorFormatVersion);
    bytes::put_u8(out, kDtypeF32);
    bytes::put_u8(out, uint8_t(t.rank()));
    bytes::put_u8(out, 0);
    bytes::put_u8(out, 0);
    for (int64_t d : t.shape) bytes::put_u64(out, uint64_t(d));
    for (float v : t.data) bytes::put_f32(out, v);
    return out;
}

inline Tensor decode_tensor(const std::vector<uint8_t>& buf) {
    bytes::Reader r(buf);
    if (buf.size() < 4 || std::memcmp(buf.data(), "NTSR", 4) != 0)
        throw FormatError("bad tensor magic (expected NTSR)");
    r.raw(4);
    uint32_t version = r.u32();
    if (version != kTensorFormatVersion)
        throw FormatError("unsupported tensor format version " + std::to_string(version));
    uint8_t dtype = r.u8();
    if (dtype != kDtypeF32)
        throw FormatError("unsupported dtype " + std::to_string(dtype));
    uint8_t rank = r.u8();
    if (rank < 1 || rank > kMaxRank)
        throw FormatError("rank out of range: " + std::to_string(rank));
    if (r.u8() != 0 || r.u8() != 0)
        throw FormatError("reserved header bytes must be zero");

    std::vector<int64_t> shape(rank);
    for (int i = 0; i < rank; ++i) {
        uint64_t d = r.u64();
        if (d < 1 || d > (uint64_t(1) << 31))
            throw FormatError("dimension out of range");
        shape[i] = int64_t(d);
    }
    int64_t n = checked_numel(shape);
    if (r.remaining() != size_t(4 * n))
        throw FormatError("payload length mismatch: expected " +
                          std::to_string(4 * n) + " bytes, have " +
                          std::to_string(r.remaining()));

    std::vector<float> data(size_t(n), 0.0f);
    for (int64_t i = 0; i < n; ++i) data[size_t(i)] = r.f32();
    Tensor t(std::move(shape), std::move(data));
    if (!t.all_finite())
        throw ValidationError("tensor contains non-finite elements");
    return t;
}

inline void save_tensor(const Tensor& t, const std::string& path) {
    bytes::write_file(path, encode_tensor(t));
}

inline Tensor load_tensor(const std::string& path) {
    return decode_tensor(bytes::read_file(path));
}

}  // namespace nabla
