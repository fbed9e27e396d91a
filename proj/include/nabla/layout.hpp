#pragma once

// Token reordering between raster order and patch-contiguous order.
//
// A latent video of T frames, H x W tokens each, is raster-flattened as
// (frame, row, col). The reordered layout keeps frames outermost and walks
// P x P patches row-major, emitting each patch's tokens row-major, so every
// contiguous run of N = P*P sequence positions is one spatial patch inside
// one frame. Frame order is never changed.

#include <cstdint>
#include <string>
#include <vector>

#include "nabla/errors.hpp"
#include "nabla/tensor.hpp"

namespace nabla {

struct TokenGrid {
    int64_t t_frames = 1;
    int64_t height = 1;
    int64_t width = 1;
    int64_t patch = 1;

    void validate() const {
        if (t_frames < 1 || height < 1 || width < 1 || patch < 1)
            throw GeometryError("grid extents and patch must be positive");
        if (height % patch != 0 || width % patch != 0)
            throw GeometryError("height and width must be divisible by patch (H=" +
                                std::to_string(height) + " W=" + std::to_string(width) +
                                " P=" + std::to_string(patch) + ")");
    }

    int64_t seq_len() const { return t_frames * height * width; }      // S
    int64_t block_tokens() const { return patch * patch; }             // N
    int64_t t_blocks() const { return t_frames; }
    int64_t h_blocks() const { return height / patch; }
    int64_t w_blocks() const { return width / patch; }
    int64_t num_blocks() const { return t_blocks() * h_blocks() * w_blocks(); }

    bool operator==(const TokenGrid&) const = default;
};

struct Permutation {
    // forward[i] = raster index of the token placed at reordered position i.
    std::vector<int64_t> forward;
    std::vector<int64_t> inverse;

    int64_t size() const { return int64_t(forward.size()); }
};

inline Permutation build_permutation(const TokenGrid& grid) {
    grid.validate();
    const int64_t hp = grid.h_blocks(), wp = grid.w_blocks(), p = grid.patch;
    Permutation perm;
    perm.forward.reserve(size_t(grid.seq_len()));
    for (int64_t f = 0; f < grid.t_frames; ++f)
        for (int64_t pr = 0; pr < hp; ++pr)
            for (int64_t pc = 0; pc < wp; ++pc)
                for (int64_t r = 0; r < p; ++r)
                    for (int64_t c = 0; c < p; ++c)
                        perm.forward.push_back(f * grid.height * grid.width +
                                               (pr * p + r) * grid.width +
                                               (pc * p + c));
    perm.inverse.assign(perm.forward.size(), 0);
    for (int64_t i = 0; i < perm.size(); ++i)
        perm.inverse[size_t(perm.forward[size_t(i)])] = i;
    return perm;
}

enum class ReorderDirection { kForward, kInverse };

// Gathers along `axis`: output token i is input token perm.forward[i]
// (or perm.inverse[i]); every other axis is untouched.
inline Tensor apply_reorder(const Tensor& x, const Permutation& perm,
                            ReorderDirection dir, int axis = 0) {
    if (axis < 0 || axis >= x.rank())
        throw GeometryError("reorder axis out of range");
    const int64_t s = x.extent(axis);
    if (s != perm.size())
        throw GeometryError("token axis length " + std::to_string(s) +
                            " does not match permutation length " +
                            std::to_string(perm.size()));

    const std::vector<int64_t>& idx =
        dir == ReorderDirection::kForward ? perm.forward : perm.inverse;

    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= x.extent(a);
    for (int a = axis + 1; a < x.rank(); ++a) inner *= x.extent(a);

    Tensor out = Tensor::zeros(x.shape);
    for (int64_t o = 0; o < outer; ++o) {
        const float* src_base = x.data.data() + o * s * inner;
        float* dst_base = out.data.data() + o * s * inner;
        for (int64_t i = 0; i < s; ++i) {
            const float* src = src_base + idx[size_t(i)] * inner;
            float* dst = dst_base + i * inner;
            for (int64_t j = 0; j < inner; ++j) dst[j] = src[j];
        }
    }
    return out;
}

}  // namespace nabla
