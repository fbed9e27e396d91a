#pragma once

// Self-attention variants over [heads, seq, dim] tensors.
//
// dense_attention        : two-pass row softmax reference.
// masked_dense_attention : masked blocks are excluded from the softmax
//                          normalization entirely; no large-negative hack.
// block_sparse_attention : touches only (query block, key block) pairs whose
//                          mask bit is set, with running-max/running-sum
//                          streaming normalization, so masked tiles are never
//                          materialized.
// attention_backward     : analytic gradients for the masked and unmasked
//                          forward paths.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nabla/block_mask.hpp"
#include "nabla/errors.hpp"
#include "nabla/parallel.hpp"
#include "nabla/tensor.hpp"

namespace nabla {

struct AttentionInputs {
    const Tensor& q;  // [heads, seq, dim]
    const Tensor& k;
    const Tensor& v;
    float scale;      // normally 1/sqrt(dim)
};

struct AttentionGrad {
    Tensor dq, dk, dv;
};

// Multiply-accumulate counters for the score and output stages.
struct AttnCounters {
    uint64_t score_madds = 0;
    uint64_t output_madds = 0;
};

inline uint64_t dense_score_madds(int64_t heads, int64_t seq, int64_t dim) {
    return uint64_t(heads) * uint64_t(seq) * uint64_t(seq) * uint64_t(dim);
}

namespace detail {

inline void check_qkv(const AttentionInputs& inp) {
    if (inp.q.rank() != 3)
        throw GeometryError("attention inputs must be [heads, seq, dim]");
    if (!inp.q.same_shape(inp.k) || !inp.q.same_shape(inp.v))
        throw GeometryError("q, k, v must share shape; got q=" + shape_string(inp.q) +
                            " k=" + shape_string(inp.k) + " v=" + shape_string(inp.v));
}

inline void check_mask(const AttentionInputs& inp, const BlockMask& mask, int64_t block_n) {
    if (block_n < 1) throw GeometryError("block size must be positive");
    const int64_t seq = inp.q.extent(1);
    if (seq != mask.rows * block_n)
        throw GeometryError("sequence length " + std::to_string(seq) +
                            " != mask rows " + std::to_string(mask.rows) +
                            " x block size " + std::to_string(block_n));
    const int64_t heads = inp.q.extent(0);
    if (mask.heads != heads && mask.heads != 1)
        throw GeometryError("mask heads " + std::to_string(mask.heads) +
                            " not broadcastable to " + std::to_string(heads));
}

}  // namespace detail

inline Tensor dense_attention(const AttentionInputs& inp) {
    detail::check_qkv(inp);
    if (!inp.q.all_finite() || !inp.k.all_finite() || !inp.v.all_finite())
        throw ValidationError("attention inputs must be finite");

    const int64_t heads = inp.q.extent(0), seq = inp.q.extent(1), dim = inp.q.extent(2);
    Tensor out = Tensor::zeros(inp.q.shape);

    parallel_for(heads, [&](int64_t h) {
        std::vector<float> scores(size_t(seq), 0.0f);
        for (int64_t i = 0; i < seq; ++i) {
            const float* qi = inp.q.data.data() + inp.q.index3(h, i, 0);
            float max_s = -std::numeric_limits<float>::infinity();
            for (int64_t j = 0; j < seq; ++j) {
                const float* kj = inp.k.data.data() + inp.k.index3(h, j, 0);
                float s = 0.0f;
                for (int64_t d = 0; d < dim; ++d) s += qi[d] * kj[d];
                s *= inp.scale;
                scores[size_t(j)] = s;
                max_s = std::max(max_s, s);
            }
            float denom = 0.0f;
            for (int64_t j = 0; j < seq; ++j) {
                scores[size_t(j)] = std::exp(scores[size_t(j)] - max_s);
                denom += scores[size_t(j)];
            }
            float* oi = out.data.data() + out.index3(h, i, 0);
            for (int64_t j = 0; j < seq; ++j) {
                const float w = scores[size_t(j)] / denom;
                const float* vj = inp.v.data.data() + inp.v.index3(h, j, 0);
                for (int64_t d = 0; d < dim; ++d) oi[d] += w * vj[d];
            }
        }
    });
    return out;
}

inline Tensor masked_dense_attention(const AttentionInputs& inp, const BlockMask& mask,
                                     int64_t block_n) {
    detail::check_qkv(inp);
    detail::check_mask(inp, mask, block_n);

    const int64_t heads = inp.q.extent(0), seq = inp.q.extent(1), dim = inp.q.extent(2);
    Tensor out = Tensor::zeros(inp.q.shape);

    parallel_for(heads, [&](int64_t h) {
        const int64_t mh = mask.heads == 1 ? 0 : h;
        std::vector<float> scores(size_t(seq), 0.0f);
        for (int64_t i = 0; i < seq; ++i) {
            const int64_t qb = i / block_n;
            const float* qi = inp.q.data.data() + inp.q.index3(h, i, 0);

            float max_s = -std::numeric_limits<float>::infinity();
            bool any = false;
            for (int64_t j = 0; j < seq; ++j) {
                if (!mask.get(mh, qb, j / block_n)) continue;
                const float* kj = inp.k.data.data() + inp.k.index3(h, j, 0);
                float s = 0.0f;
                for (int64_t d = 0; d < dim; ++d) s += qi[d] * kj[d];
                s *= inp.scale;
                scores[size_t(j)] = s;
                max_s = std::max(max_s, s);
                any = true;
            }
            if (!any)
                throw ValidationError("query block " + std::to_string(qb) +
                                      " has no attendable key blocks");

            float denom = 0.0f;
            for (int64_t j = 0; j < seq; ++j) {
                if (!mask.get(mh, qb, j / block_n)) continue;
                scores[size_t(j)] = std::exp(scores[size_t(j)] - max_s);
                denom += scores[size_t(j)];
            }
            float* oi = out.data.data() + out.index3(h, i, 0);
            for (int64_t j = 0; j < seq; ++j) {
                if (!mask.get(mh, qb, j / block_n)) continue;
                const float w = scores[size_t(j)] / denom;
                const float* vj = inp.v.data.data() + inp.v.index3(h, j, 0);
                for (int64_t d = 0; d < dim; ++d) oi[d] += w * vj[d];
            }
        }
    });
    return out;
}

inline Tensor block_sparse_attention(const AttentionInputs& inp, const BlockMask& mask,
                                     int64_t block_n, AttnCounters* counters = nullptr) {
    detail::check_qkv(inp);
    detail::check_mask(inp, mask, block_n);

    const int64_t heads = inp.q.extent(0), seq = inp.q.extent(1), dim = inp.q.extent(2);
    const int64_t blocks = mask.rows;
    Tensor out = Tensor::zeros(inp.q.shape);

    std::vector<AttnCounters> per_head(size_t(heads), AttnCounters{});

    parallel_for(heads, [&](int64_t h) {
        const int64_t mh = mask.heads == 1 ? 0 : h;
        std::vector<float> row_max(size_t(block_n), 0.0f);
        std::vector<float> row_sum(size_t(block_n), 0.0f);
        std::vector<float> acc(size_t(block_n * dim), 0.0f);
        std::vector<float> tile(size_t(block_n * block_n), 0.0f);
        AttnCounters& ctr = per_head[size_t(h)];

        for (int64_t qb = 0; qb < blocks; ++qb) {
            std::fill(row_max.begin(), row_max.end(),
                      -std::numeric_limits<float>::infinity());
            std::fill(row_sum.begin(), row_sum.end(), 0.0f);
            std::fill(acc.begin(), acc.end(), 0.0f);
            bool any = false;

            for (int64_t kb = 0; kb < blocks; ++kb) {
                if (!mask.get(mh, qb, kb)) continue;
                any = true;

                // score tile
                for (int64_t ii = 0; ii < block_n; ++ii) {
                    const float* qi = inp.q.data.data() + inp.q.index3(h, qb * block_n + ii, 0);
                    float* trow = tile.data() + ii * block_n;
                    for (int64_t jj = 0; jj < block_n; ++jj) {
                        const float* kj = inp.k.data.data() +
                                          inp.k.index3(h, kb * block_n + jj, 0);
                        float s = 0.0f;
                        for (int64_t d = 0; d < dim; ++d) s += qi[d] * kj[d];
                        trow[jj] = s * inp.scale;
                    }
                }
                ctr.score_madds += uint64_t(block_n) * uint64_t(block_n) * uint64_t(dim);

                // online rescale and accumulate
                for (int64_t ii = 0; ii < block_n; ++ii) {
                    float* trow = tile.data() + ii * block_n;
                    float tile_max = trow[0];
                    for (int64_t jj = 1; jj < block_n; ++jj)
                        tile_max = std::max(tile_max, trow[jj]);
                    const float new_max = std::max(row_max[size_t(ii)], tile_max);
                    const float corr = row_max[size_t(ii)] ==
                                       -std::numeric_limits<float>::infinity()
                                           ? 0.0f
                                           : std::exp(row_max[size_t(ii)] - new_max);
                    float part = 0.0f;
                    float* arow = acc.data() + ii * dim;
                    for (int64_t d = 0; d < dim; ++d) arow[d] *= corr;
                    for (int64_t jj = 0; jj < block_n; ++jj) {
                        const float p = std::exp(trow[jj] - new_max);
                        part += p;
                        const float* vj = inp.v.data.data() +
                                          inp.v.index3(h, kb * block_n + jj, 0);
                        for (int64_t d = 0; d < dim; ++d) arow[d] += p * vj[d];
                    }
                    ctr.output_madds += uint64_t(block_n) * uint64_t(dim);
                    row_sum[size_t(ii)] = row_sum[size_t(ii)] * corr + part;
                    row_max[size_t(ii)] = new_max;
                }
            }
            if (!any)
                throw ValidationError("query block " + std::to_string(qb) +
                                      " has no attendable key blocks");

            for (int64_t ii = 0; ii < block_n; ++ii) {
                float* oi = out.data.data() + out.index3(h, qb * block_n + ii, 0);
                const float* arow = acc.data() + ii * dim;
                const float inv = 1.0f / row_sum[size_t(ii)];
                for (int64_t d = 0; d < dim; ++d) oi[d] = arow[d] * inv;
            }
        }
    });

    if (counters) {
        for (const auto& c : per_head) {
            counters->score_madds += c.score_madds;
            counters->output_madds += c.output_madds;
        }
    }
    return out;
}

// Gradients of (masked) attention wrt q, k, v. Pass mask = nullptr for the
// unmasked case. Softmax rows are recomputed two-pass; interactions inside
// masked blocks contribute nothing to any gradient.
inline AttentionGrad attention_backward(const AttentionInputs& inp, const BlockMask* mask,
                                        int64_t block_n, const Tensor& dout) {
    detail::check_qkv(inp);
    if (!dout.same_shape(inp.q))
        throw GeometryError("dout shape " + shape_string(dout) +
                            " does not match inputs " + shape_string(inp.q));
    if (mask) detail::check_mask(inp, *mask, block_n);

    const int64_t heads = inp.q.extent(0), seq = inp.q.extent(1), dim = inp.q.extent(2);
    AttentionGrad grad{Tensor::zeros(inp.q.shape), Tensor::zeros(inp.q.shape),
                       Tensor::zeros(inp.q.shape)};

    parallel_for(heads, [&](int64_t h) {
        const int64_t mh = (mask && mask->heads != 1) ? h : 0;
        std::vector<float> p(size_t(seq), 0.0f);
        std::vector<float> dp(size_t(seq), 0.0f);

        for (int64_t i = 0; i < seq; ++i) {
            const int64_t qb = block_n > 0 ? i / block_n : 0;
            auto allowed = [&](int64_t j) {
                return !mask || mask->get(mh, qb, j / block_n);
            };
            const float* qi = inp.q.data.data() + inp.q.index3(h, i, 0);
            const float* doi = dout.data.data() + dout.index3(h, i, 0);

            float max_s = -std::numeric_limits<float>::infinity();
            bool any = false;
            for (int64_t j = 0; j < seq; ++j) {
                if (!allowed(j)) continue;
                const float* kj = inp.k.data.data() + inp.k.index3(h, j, 0);
                float s = 0.0f;
                for (int64_t d = 0; d < dim; ++d) s += qi[d] * kj[d];
                s *= inp.scale;
                p[size_t(j)] = s;
                max_s = std::max(max_s, s);
                any = true;
            }
            if (!any)
                throw ValidationError("query block " + std::to_string(qb) +
                                      " has no attendable key blocks");
            float denom = 0.0f;
            for (int64_t j = 0; j < seq; ++j) {
                if (!allowed(j)) continue;
                p[size_t(j)] = std::exp(p[size_t(j)] - max_s);
                denom += p[size_t(j)];
            }

            // dp_j = dout_i . v_j ; ds_j = p_j (dp_j - sum_l p_l dp_l)
            float dot_p_dp = 0.0f;
            for (int64_t j = 0; j < seq; ++j) {
                if (!allowed(j)) continue;
                p[size_t(j)] /= denom;
                const float* vj = inp.v.data.data() + inp.v.index3(h, j, 0);
                float d = 0.0f;
                for (int64_t dd = 0; dd < dim; ++dd) d += doi[dd] * vj[dd];
                dp[size_t(j)] = d;
                dot_p_dp += p[size_t(j)] * d;
            }

            float* dqi = grad.dq.data.data() + grad.dq.index3(h, i, 0);
            for (int64_t j = 0; j < seq; ++j) {
                if (!allowed(j)) continue;
                const float pj = p[size_t(j)];
                const float ds = inp.scale * pj * (dp[size_t(j)] - dot_p_dp);
                const float* kj = inp.k.data.data() + inp.k.index3(h, j, 0);
                float* dkj = grad.dk.data.data() + grad.dk.index3(h, j, 0);
                float* dvj = grad.dv.data.data() + grad.dv.index3(h, j, 0);
                for (int64_t d = 0; d < dim; ++d) {
                    dqi[d] += ds * kj[d];
                    dkj[d] += ds * qi[d];
                    dvj[d] += pj * doi[d];
                }
            }
        }
    });
    return grad;
}

}  // namespace nabla
