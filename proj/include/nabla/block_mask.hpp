#pragma once

// Per-head binary mask over (query block, key block) pairs, plus its
// bit-exact .nmsk container and PGM export.
//
// Bit layout (in memory and on disk): one byte run per row, (cols+7)/8
// bytes, MSB-first within each byte, padding bits zero. .nmsk layout:
//   magic   : 4 bytes "NMSK"
//   version : u32 = 1, little-endian
//   heads, rows, cols : u64 each, little-endian
//   bits    : heads * rows * ceil(cols/8) bytes

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "nabla/bytes.hpp"
#include "nabla/errors.hpp"

namespace nabla {

constexpr uint32_t kMaskFormatVersion = 1;

struct BlockMask {
    int64_t heads = 0;
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> bits;

    BlockMask() = default;

    BlockMask(int64_t heads_in, int64_t rows_in, int64_t cols_in)
        : heads(heads_in), rows(rows_in), cols(cols_in) {
        if (heads < 1 || rows < 1 || cols < 1)
            throw GeometryError("mask dimensions must be positive");
        if (rows != cols)
            throw GeometryError("self-attention block mask must be square");
        bits.assign(size_t(heads * rows * bytes_per_row()), 0);
    }

    static BlockMask all_true(int64_t heads, int64_t rows, int64_t cols) {
        BlockMask m(heads, rows, cols);
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c) m.set(h, r, c, true);
        return m;
    }

    int64_t bytes_per_row() const { return (cols + 7) / 8; }

    size_t byte_index(int64_t h, int64_t r, int64_t c) const {
        return size_t((h * rows + r) * bytes_per_row() + c / 8);
    }

    bool get(int64_t h, int64_t r, int64_t c) const {
        return (bits[byte_index(h, r, c)] >> (7 - (c & 7))) & 1;
    }

    void set(int64_t h, int64_t r, int64_t c, bool v) {
        uint8_t& b = bits[byte_index(h, r, c)];
        uint8_t bit = uint8_t(1u << (7 - (c & 7)));
        b = v ? uint8_t(b | bit) : uint8_t(b & ~bit);
    }

    // Padding bits are kept zero, so byte-wise popcount is exact.
    uint64_t popcount() const {
        uint64_t n = 0;
        for (uint8_t b : bits) n += uint64_t(std::popcount(b));
        return n;
    }

    uint64_t row_popcount(int64_t h, int64_t r) const {
        uint64_t n = 0;
        const uint8_t* p = bits.data() + size_t((h * rows + r) * bytes_per_row());
        for (int64_t i = 0; i < bytes_per_row(); ++i) n += uint64_t(std::popcount(p[i]));
        return n;
    }

    bool operator==(const BlockMask&) const = default;
};

inline std::vector<uint8_t> encode_mask(const BlockMask& m) {
    std::vector<uint8_t> out;
    out.reserve(size_t(32) + m.bits.size());
    out.insert(out.end(), {'N', 'M', 'S', 'K'});
    bytes::put_u32(out, kMaskFormatVersion);
    bytes::put_u64(out, uint64_t(m.heads));
    bytes::put_u64(out, uint64_t(m.rows));
    bytes::put_u64(out, uint64_t(m.cols));
    out.insert(out.end(), m.bits.begin(), m.bits.end());
    return out;
}

inline BlockMask decode_mask(const std::vector<uint8_t>& buf) {
    bytes::Reader r(buf);
    if (buf.size() < 4 || std::memcmp(buf.data(), "NMSK", 4) != 0)
        throw FormatError("bad mask magic (expected NMSK)");
    r.raw(4);
    uint32_t version = r.u32();
    if (version != kMaskFormatVersion)
        throw FormatError("unsupported mask format version " + std::to_string(version));
    uint64_t heads = r.u64(), rows = r.u64(), cols = r.u64();
    if (heads < 1 || rows < 1 || cols < 1 ||
        heads > (1u << 16) || rows > (1u << 24) || cols > (1u << 24))
        throw FormatError("mask dimensions out of range");
    if (rows != cols) throw FormatError("mask must be square");

    BlockMask m{int64_t(heads), int64_t(rows), int64_t(cols)};
    if (r.remaining() != m.bits.size())
        throw FormatError("mask payload length mismatch: expected " +
                          std::to_string(m.bits.size()) + " bytes, have " +
                          std::to_string(r.remaining()));
    const uint8_t* p = r.raw(m.bits.size());
    std::copy(p, p + m.bits.size(), m.bits.begin());

    // Reject set padding bits; popcount arithmetic relies on them being zero.
    if (cols % 8 != 0) {
        uint8_t pad_mask = uint8_t(0xFFu >> (cols % 8));
        for (int64_t h = 0; h < m.heads; ++h)
            for (int64_t row = 0; row < m.rows; ++row) {
                size_t last = size_t((h * m.rows + row + 1) * m.bytes_per_row() - 1);
                if (m.bits[last] & pad_mask)
                    throw FormatError("mask row padding bits must be zero");
            }
    }
    return m;
}

inline void save_mask(const BlockMask& m, const std::string& path) {
    bytes::write_file(path, encode_mask(m));
}

inline BlockMask load_mask(const std::string& path) {
    return decode_mask(bytes::read_file(path));
}

// Binary PGM (P5), one pixel per block: 255 = attended, 0 = masked.
inline void export_mask_pgm(const BlockMask& m, int64_t head, const std::string& path) {
    if (head < 0 || head >= m.heads)
        throw ParamError("head index " + std::to_string(head) + " out of range");
    std::string header = "P5\n" + std::to_string(m.cols) + " " +
                         std::to_string(m.rows) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + size_t(m.rows * m.cols));
    for (int64_t r = 0; r < m.rows; ++r)
        for (int64_t c = 0; c < m.cols; ++c)
            out.push_back(m.get(head, r, c) ? 255 : 0);
    bytes::write_file(path, out);
}

}  // namespace nabla
