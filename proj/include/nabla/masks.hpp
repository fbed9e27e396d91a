#pragma once

// Block-mask generators and mask arithmetic.
//
// nabla_mask: per head, mean-pool queries and keys over runs of N tokens,
// softmax the pooled score matrix, then per row keep the smallest set of
// highest-probability key blocks whose cumulative mass reaches thr. The cut
// is evaluated on the ascending cumulative sum: sort ascending, cumsum,
// keep positions with cumsum >= 1 - thr, scatter back to column order.
//
// sta_mask: static sliding window over (frame, patch-row, patch-col) block
// coordinates. The window is centered on the query block and shifted at the
// grid boundary so it always covers exactly w_t*w_h*w_w blocks, which keeps
// the dense-block count an exact product.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "nabla/block_mask.hpp"
#include "nabla/errors.hpp"
#include "nabla/layout.hpp"
#include "nabla/parallel.hpp"
#include "nabla/tensor.hpp"

namespace nabla {

struct NablaParams {
    double thr = 0.5;       // retained probability mass per row, in [0,1]
    int64_t block_n = 1;    // tokens per block, equals grid patch^2
    float scale = 1.0f;     // score scale, normally 1/sqrt(D)

    static NablaParams with_default_scale(double thr, int64_t block_n, int64_t dim) {
        return NablaParams{thr, block_n, 1.0f / std::sqrt(float(dim))};
    }
};

struct StaWindow {
    int64_t w_t = 1, w_h = 1, w_w = 1;  // window extents in blocks, odd
    TokenGrid grid;

    void validate() const {
        grid.validate();
        if (w_t < 1 || w_h < 1 || w_w < 1)
            throw ParamError("window extents must be positive");
        if (w_t % 2 == 0 || w_h % 2 == 0 || w_w % 2 == 0)
            throw ParamError("window extents must be odd");
        if (w_t > grid.t_blocks() || w_h > grid.h_blocks() || w_w > grid.w_blocks())
            throw ParamError("window larger than block grid");
    }
};

namespace detail {

// Marks the retained positions of one pooled-softmax row. Ascending value
// sort with ties broken by ascending column index; sequential float cumsum;
// the last cumulative value is clamped to 1 so at least one block always
// survives even when the row sums to 1 - epsilon.
inline void threshold_row(const float* row, int64_t n, float keep_mass,
                          std::vector<int64_t>& order_buf, BlockMask& mask,
                          int64_t head, int64_t r) {
    order_buf.resize(size_t(n));
    std::iota(order_buf.begin(), order_buf.end(), int64_t(0));
    std::sort(order_buf.begin(), order_buf.end(), [row](int64_t a, int64_t b) {
        return row[a] < row[b] || (row[a] == row[b] && a < b);
    });
    const float cut = 1.0f - keep_mass;
    float cum = 0.0f;
    for (int64_t i = 0; i < n; ++i) {
        cum += row[order_buf[size_t(i)]];
        if (i == n - 1) cum = 1.0f;
        if (cum >= cut) mask.set(head, r, order_buf[size_t(i)], true);
    }
}

inline void pool_blocks(const Tensor& x, int64_t head, int64_t blocks,
                        int64_t block_n, int64_t dim, std::vector<float>& pooled) {
    pooled.assign(size_t(blocks * dim), 0.0f);
    const float inv_n = 1.0f / float(block_n);
    for (int64_t b = 0; b < blocks; ++b) {
        float* dst = pooled.data() + b * dim;
        for (int64_t t = 0; t < block_n; ++t) {
            const float* src = x.data.data() + x.index3(head, b * block_n + t, 0);
            for (int64_t d = 0; d < dim; ++d) dst[d] += src[d];
        }
        for (int64_t d = 0; d < dim; ++d) dst[d] *= inv_n;
    }
}

}  // namespace detail

inline BlockMask nabla_mask(const Tensor& q, const Tensor& k, const NablaParams& params) {
    if (params.thr < 0.0 || params.thr > 1.0)
        throw ParamError("thr must lie in [0,1], got " + std::to_string(params.thr));
    if (params.block_n < 1) throw ParamError("block_n must be positive");
    if (q.rank() != 3 || !q.same_shape(k))
        throw GeometryError("q and k must share shape [heads, seq, dim]");
    const int64_t heads = q.extent(0), seq = q.extent(1), dim = q.extent(2);
    if (seq % params.block_n != 0)
        throw GeometryError("sequence length " + std::to_string(seq) +
                            " not divisible by block size " + std::to_string(params.block_n));

    const int64_t blocks = seq / params.block_n;
    const float keep_mass = float(params.thr);
    BlockMask mask(heads, blocks, blocks);

    parallel_for(heads, [&](int64_t h) {
        std::vector<float> qa, ka;
        detail::pool_blocks(q, h, blocks, params.block_n, dim, qa);
        detail::pool_blocks(k, h, blocks, params.block_n, dim, ka);

        std::vector<float> row(size_t(blocks), 0.0f);
        std::vector<int64_t> order;
        for (int64_t i = 0; i < blocks; ++i) {
            const float* qi = qa.data() + i * dim;
            float max_s = -std::numeric_limits<float>::infinity();
            for (int64_t j = 0; j < blocks; ++j) {
                const float* kj = ka.data() + j * dim;
                float s = 0.0f;
                for (int64_t d = 0; d < dim; ++d) s += qi[d] * kj[d];
                s *= params.scale;
                row[size_t(j)] = s;
                max_s = std::max(max_s, s);
            }
            float denom = 0.0f;
            for (int64_t j = 0; j < blocks; ++j) {
                row[size_t(j)] = std::exp(row[size_t(j)] - max_s);
                denom += row[size_t(j)];
            }
            for (int64_t j = 0; j < blocks; ++j) row[size_t(j)] /= denom;

            detail::threshold_row(row.data(), blocks, keep_mass, order, mask, h, i);
        }
    });
    return mask;
}

// Single-head static window mask; broadcastable against per-head masks.
inline BlockMask sta_mask(const StaWindow& window, int64_t heads = 1) {
    window.validate();
    if (heads < 1) throw ParamError("sta mask heads must be >= 1");
    const int64_t tb = window.grid.t_blocks();
    const int64_t hb = window.grid.h_blocks();
    const int64_t wb = window.grid.w_blocks();
    const int64_t n = tb * hb * wb;
    const int64_t rt = (window.w_t - 1) / 2;
    const int64_t rh = (window.w_h - 1) / 2;
    const int64_t rw = (window.w_w - 1) / 2;

    auto clamp_center = [](int64_t q, int64_t radius, int64_t extent) {
        return std::clamp(q, radius, extent - 1 - radius);
    };

    BlockMask mask(heads, n, n);
    for (int64_t qt = 0; qt < tb; ++qt)
        for (int64_t qh = 0; qh < hb; ++qh)
            for (int64_t qw = 0; qw < wb; ++qw) {
                const int64_t r = (qt * hb + qh) * wb + qw;
                const int64_t ct = clamp_center(qt, rt, tb);
                const int64_t ch = clamp_center(qh, rh, hb);
                const int64_t cw = clamp_center(qw, rw, wb);
                for (int64_t kt = ct - rt; kt <= ct + rt; ++kt)
                    for (int64_t kh = ch - rh; kh <= ch + rh; ++kh)
                        for (int64_t kw = cw - rw; kw <= cw + rw; ++kw)
                            for (int64_t h = 0; h < heads; ++h)
                                mask.set(h, r, (kt * hb + kh) * wb + kw, true);
            }
    return mask;
}

// Elementwise OR; a single-head operand broadcasts across the other's heads.
inline BlockMask join_masks(const BlockMask& a, const BlockMask& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw GeometryError("mask shapes differ");
    if (a.heads != b.heads && a.heads != 1 && b.heads != 1)
        throw GeometryError("mask head counts are not broadcastable");

    const int64_t heads = std::max(a.heads, b.heads);
    BlockMask out(heads, a.rows, a.cols);
    const int64_t row_bytes = out.bytes_per_row();
    for (int64_t h = 0; h < heads; ++h) {
        const int64_t ha = a.heads == 1 ? 0 : h;
        const int64_t hb = b.heads == 1 ? 0 : h;
        for (int64_t r = 0; r < out.rows; ++r) {
            const uint8_t* pa = a.bits.data() + size_t((ha * a.rows + r) * row_bytes);
            const uint8_t* pb = b.bits.data() + size_t((hb * b.rows + r) * row_bytes);
            uint8_t* po = out.bits.data() + size_t((h * out.rows + r) * row_bytes);
            for (int64_t i = 0; i < row_bytes; ++i) po[i] = uint8_t(pa[i] | pb[i]);
        }
    }
    return out;
}

// Fraction of block pairs skipped: 0 for a full mask, 1 - 1/R for a diagonal.
inline double sparsity(const BlockMask& m) {
    const double total = double(m.heads) * double(m.rows) * double(m.cols);
    return 1.0 - double(m.popcount()) / total;
}

// Dense-block count of the clamped sliding window: window volume times grid
// volume, in block units. Always equals popcount(sta_mask(window)).
inline int64_t sta_dense_block_count(const StaWindow& window) {
    window.validate();
    return window.w_t * window.w_h * window.w_w *
           window.grid.t_blocks() * window.grid.h_blocks() * window.grid.w_blocks();
}

}  // namespace nabla
