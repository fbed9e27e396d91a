#pragma once

// Small pre-norm transformer denoiser with hand-written backprop.
//
// Geometry: tokens arrive in raster order as [S, channels]; the model
// reorders them to the patch-contiguous layout on entry and restores raster
// order on exit. Every attention variant runs through the block-sparse
// kernel, so "full" is simply the all-true mask and saturated adaptive masks
// reproduce it bit for bit.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nabla/attention.hpp"
#include "nabla/errors.hpp"
#include "nabla/layout.hpp"
#include "nabla/masks.hpp"
#include "nabla/rng.hpp"
#include "nabla/tensor.hpp"
#include "nabla/tensor_io.hpp"

namespace nabla {

constexpr int kTimeFeatures = 16;  // 8 sin/cos pairs of dyadic frequencies
constexpr float kLnEps = 1e-5f;

enum class AttentionKind { kFull, kNabla, kNablaSta, kIdentity };

struct AttentionMode {
    AttentionKind kind = AttentionKind::kFull;
    double thr = 1.0;
    int64_t w_t = 1, w_h = 1, w_w = 1;

    static AttentionMode full() { return {}; }
    static AttentionMode nabla(double thr) {
        return {AttentionKind::kNabla, thr, 1, 1, 1};
    }
    static AttentionMode nabla_sta(double thr, int64_t wt, int64_t wh, int64_t ww) {
        return {AttentionKind::kNablaSta, thr, wt, wh, ww};
    }
    static AttentionMode identity() { return {AttentionKind::kIdentity, 0, 1, 1, 1}; }
};

// "full", "identity", "nabla:0.9", "nabla:0.5+sta:3,3,3"
inline AttentionMode parse_attention_mode(const std::string& text) {
    if (text == "full") return AttentionMode::full();
    if (text == "identity") return AttentionMode::identity();
    auto parse_thr = [&](const std::string& s) {
        size_t pos = 0;
        double thr = 0.0;
        try {
            thr = std::stod(s, &pos);
        } catch (const std::exception&) {
            throw ParamError("bad threshold in mode: " + text);
        }
        if (pos != s.size()) throw ParamError("bad threshold in mode: " + text);
        return thr;
    };
    if (text.rfind("nabla:", 0) == 0) {
        std::string rest = text.substr(6);
        size_t plus = rest.find("+sta:");
        if (plus == std::string::npos) return AttentionMode::nabla(parse_thr(rest));
        double thr = parse_thr(rest.substr(0, plus));
        std::string win = rest.substr(plus + 5);
        int64_t w[3];
        size_t start = 0;
        for (int i = 0; i < 3; ++i) {
            size_t comma = i < 2 ? win.find(',', start) : win.size();
            if (comma == std::string::npos) throw ParamError("bad window in mode: " + text);
            try {
                w[i] = std::stoll(win.substr(start, comma - start));
            } catch (const std::exception&) {
                throw ParamError("bad window in mode: " + text);
            }
            start = comma + 1;
        }
        return AttentionMode::nabla_sta(thr, w[0], w[1], w[2]);
    }
    throw ParamError("unknown attention mode: " + text);
}

inline std::string to_string(const AttentionMode& m) {
    switch (m.kind) {
        case AttentionKind::kFull: return "full";
        case AttentionKind::kIdentity: return "identity";
        case AttentionKind::kNabla: {
            std::ostringstream os;
            os << "nabla:" << m.thr;
            return os.str();
        }
        case AttentionKind::kNablaSta: {
            std::ostringstream os;
            os << "nabla:" << m.thr << "+sta:" << m.w_t << "," << m.w_h << "," << m.w_w;
            return os.str();
        }
    }
    return "full";
}

struct ModelGeom {
    TokenGrid grid;
    int depth = 2;
    int heads = 2;
    int dim = 16;       // per-head width
    int channels = 16;  // data channels

    int model_width() const { return heads * dim; }

    void validate() const {
        grid.validate();
        if (depth < 1 || heads < 1 || dim < 1 || channels < 1)
            throw ParamError("model geometry fields must be positive");
    }
};

// ---- parameter containers --------------------------------------------------

struct LinearP {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
};

struct LnP {
    Tensor g, b;  // [width]
};

struct BlockP {
    LnP ln1;
    LinearP q, k, v, o;
    LnP ln2;
    LinearP fc1, fc2;
};

struct ModelParams {
    LinearP in, time;
    std::vector<BlockP> blocks;
    LnP lnf;
    LinearP out;
};

namespace detail {
template <typename A, typename... R>
A& first_of(A& a, R&...) { return a; }
}  // namespace detail

// Visits every tensor of the given containers in a fixed order with a stable
// name: fn(name, a_tensor, b_tensor, ...). All containers must share the same
// block count; const containers yield const Tensor references.
template <typename Fn, typename... MP>
void visit_params(Fn&& fn, MP&... mps) {
    auto lin = [&](const std::string& name, auto&... ls) {
        fn(name + ".w", ls.w...);
        fn(name + ".b", ls.b...);
    };
    auto ln = [&](const std::string& name, auto&... ls) {
        fn(name + ".g", ls.g...);
        fn(name + ".b", ls.b...);
    };
    lin("in", mps.in...);
    lin("time", mps.time...);
    const size_t nblocks = detail::first_of(mps...).blocks.size();
    for (size_t i = 0; i < nblocks; ++i) {
        const std::string p = "blk" + std::to_string(i);
        ln(p + ".ln1", mps.blocks[i].ln1...);
        lin(p + ".q", mps.blocks[i].q...);
        lin(p + ".k", mps.blocks[i].k...);
        lin(p + ".v", mps.blocks[i].v...);
        lin(p + ".o", mps.blocks[i].o...);
        ln(p + ".ln2", mps.blocks[i].ln2...);
        lin(p + ".fc1", mps.blocks[i].fc1...);
        lin(p + ".fc2", mps.blocks[i].fc2...);
    }
    ln("final_ln", mps.lnf...);
    lin("out", mps.out...);
}

// ---- dense math helpers ----------------------------------------------------

namespace nn {

// y[s,:] += x[s,:] . w  with w stored [in, out]
inline void matmul(const Tensor& x, const Tensor& w, Tensor& y) {
    const int64_t s_len = x.extent(0), in = x.extent(1), out_w = w.extent(1);
    for (int64_t s = 0; s < s_len; ++s) {
        const float* xs = x.data.data() + s * in;
        float* ys = y.data.data() + s * out_w;
        for (int64_t m = 0; m < in; ++m) {
            const float xm = xs[m];
            const float* wr = w.data.data() + m * out_w;
            for (int64_t n = 0; n < out_w; ++n) ys[n] += xm * wr[n];
        }
    }
}

inline Tensor linear(const Tensor& x, const LinearP& p) {
    const int64_t s_len = x.extent(0), out_w = p.w.extent(1);
    Tensor y = Tensor::zeros({s_len, out_w});
    for (int64_t s = 0; s < s_len; ++s) {
        float* ys = y.data.data() + s * out_w;
        for (int64_t n = 0; n < out_w; ++n) ys[n] = p.b.data[size_t(n)];
    }
    matmul(x, p.w, y);
    return y;
}

// dx = dy . w^T ; dw += x^T . dy ; db += colsum(dy)
inline Tensor linear_backward(const Tensor& x, const LinearP& p, const Tensor& dy,
                              LinearP& grad) {
    const int64_t s_len = x.extent(0), in = x.extent(1), out_w = p.w.extent(1);
    Tensor dx = Tensor::zeros(x.shape);
    for (int64_t s = 0; s < s_len; ++s) {
        const float* xs = x.data.data() + s * in;
        const float* dys = dy.data.data() + s * out_w;
        float* dxs = dx.data.data() + s * in;
        for (int64_t m = 0; m < in; ++m) {
            const float* wr = p.w.data.data() + m * out_w;
            float* gwr = grad.w.data.data() + m * out_w;
            float acc = 0.0f;
            const float xm = xs[m];
            for (int64_t n = 0; n < out_w; ++n) {
                acc += dys[n] * wr[n];
                gwr[n] += xm * dys[n];
            }
            dxs[m] = acc;
        }
        float* gb = grad.b.data.data();
        for (int64_t n = 0; n < out_w; ++n) gb[n] += dys[n];
    }
    return dx;
}

struct LnCache {
    Tensor xhat;               // [S, width]
    std::vector<float> rstd;   // per token
};

inline Tensor layer_norm(const Tensor& x, const LnP& p, LnCache& cache) {
    const int64_t s_len = x.extent(0), width = x.extent(1);
    cache.xhat = Tensor::zeros(x.shape);
    cache.rstd.assign(size_t(s_len), 0.0f);
    Tensor y = Tensor::zeros(x.shape);
    for (int64_t s = 0; s < s_len; ++s) {
        const float* xs = x.data.data() + s * width;
        float mean = 0.0f;
        for (int64_t m = 0; m < width; ++m) mean += xs[m];
        mean /= float(width);
        float var = 0.0f;
        for (int64_t m = 0; m < width; ++m) {
            const float d = xs[m] - mean;
            var += d * d;
        }
        var /= float(width);
        const float rstd = 1.0f / std::sqrt(var + kLnEps);
        cache.rstd[size_t(s)] = rstd;
        float* xh = cache.xhat.data.data() + s * width;
        float* ys = y.data.data() + s * width;
        for (int64_t m = 0; m < width; ++m) {
            xh[m] = (xs[m] - mean) * rstd;
            ys[m] = xh[m] * p.g.data[size_t(m)] + p.b.data[size_t(m)];
        }
    }
    return y;
}

inline Tensor layer_norm_backward(const LnP& p, const LnCache& cache, const Tensor& dy,
                                  LnP& grad) {
    const int64_t s_len = dy.extent(0), width = dy.extent(1);
    Tensor dx = Tensor::zeros(dy.shape);
    for (int64_t s = 0; s < s_len; ++s) {
        const float* dys = dy.data.data() + s * width;
        const float* xh = cache.xhat.data.data() + s * width;
        float mean_dxhat = 0.0f, mean_dxhat_xhat = 0.0f;
        for (int64_t m = 0; m < width; ++m) {
            const float dxhat = dys[m] * p.g.data[size_t(m)];
            grad.g.data[size_t(m)] += dys[m] * xh[m];
            grad.b.data[size_t(m)] += dys[m];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh[m];
        }
        mean_dxhat /= float(width);
        mean_dxhat_xhat /= float(width);
        const float rstd = cache.rstd[size_t(s)];
        float* dxs = dx.data.data() + s * width;
        for (int64_t m = 0; m < width; ++m) {
            const float dxhat = dys[m] * p.g.data[size_t(m)];
            dxs[m] = rstd * (dxhat - mean_dxhat - xh[m] * mean_dxhat_xhat);
        }
    }
    return dx;
}

inline float gelu(float x) {
    const float kC = 0.7978845608028654f;  // sqrt(2/pi)
    const float u = kC * (x + 0.044715f * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(u));
}

inline float gelu_grad(float x) {
    const float kC = 0.7978845608028654f;
    const float u = kC * (x + 0.044715f * x * x * x);
    const float t = std::tanh(u);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * kC * (1.0f + 3.0f * 0.044715f * x * x);
}

// [S, width] -> [heads, S, dim]
inline Tensor split_heads(const Tensor& x, int heads, int dim) {
    const int64_t s_len = x.extent(0);
    Tensor out = Tensor::zeros({heads, s_len, dim});
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t s = 0; s < s_len; ++s)
            for (int64_t d = 0; d < dim; ++d)
                out.at3(h, s, d) = x.at2(s, h * dim + d);
    return out;
}

inline Tensor merge_heads(const Tensor& x) {
    const int64_t heads = x.extent(0), s_len = x.extent(1), dim = x.extent(2);
    Tensor out = Tensor::zeros({s_len, heads * dim});
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t s = 0; s < s_len; ++s)
            for (int64_t d = 0; d < dim; ++d)
                out.at2(s, h * dim + d) = x.at3(h, s, d);
    return out;
}

}  // namespace nn

// ---- the model ---------------------------------------------------------------

// Static per-run mask context: the all-true mask for full mode and the
// window mask for the hybrid mode. Adaptive masks are rebuilt each forward.
struct PreparedMode {
    AttentionMode mode;
    BlockMask full;
    BlockMask sta;
};

struct BlockCache {
    nn::LnCache ln1;
    Tensor y1;            // ln1 output
    Tensor q3, k3, v3;    // [heads, S, dim]
    BlockMask mask;
    Tensor attn_merged;   // [S, width]
    nn::LnCache ln2;
    Tensor y2;
    Tensor h1;            // pre-activation
    Tensor act;           // gelu(h1)
};

struct ForwardCache {
    Tensor x_reordered;               // model input after permutation
    std::vector<float> time_feat;
    Tensor x_embedded;                // unused by backward, kept for probes
    std::vector<BlockCache> blocks;
    nn::LnCache lnf;
    Tensor yf;
    double mask_sparsity_sum = 0.0;   // summed over layers this forward
    int mask_count = 0;
};

class ToyDenoiser {
public:
    ModelGeom geom;
    ModelParams params;
    Permutation perm;
    bool use_reorder = true;

    ToyDenoiser() = default;

    ToyDenoiser(const ModelGeom& g, uint64_t seed) : geom(g) {
        geom.validate();
        allocate();
        init_weights(seed);
        perm = build_permutation(geom.grid);
    }

    PreparedMode prepare(const AttentionMode& mode) const {
        PreparedMode pm;
        pm.mode = mode;
        const int64_t blocks = geom.grid.num_blocks();
        pm.full = BlockMask::all_true(geom.heads, blocks, blocks);
        if (mode.kind == AttentionKind::kNablaSta)
            pm.sta = sta_mask(StaWindow{mode.w_t, mode.w_h, mode.w_w, geom.grid});
        if (mode.kind == AttentionKind::kNabla || mode.kind == AttentionKind::kNablaSta) {
            if (mode.thr < 0.0 || mode.thr > 1.0) throw ParamError("thr must lie in [0,1]");
        }
        return pm;
    }

    // x: [S, channels] raster order; t in [0,1]. Returns [S, channels].
    Tensor forward(const Tensor& x, double t, const PreparedMode& pm,
                   ForwardCache& cache) const {
        const int64_t s_len = geom.grid.seq_len();
        if (x.rank() != 2 || x.extent(0) != s_len || x.extent(1) != geom.channels)
            throw GeometryError("model input must be [" + std::to_string(s_len) + "," +
                                std::to_string(geom.channels) + "], got " + shape_string(x));
        const int width = geom.model_width();
        const int64_t block_n = geom.grid.block_tokens();
        const float attn_scale = 1.0f / std::sqrt(float(geom.dim));

        cache.x_reordered = use_reorder
                                ? apply_reorder(x, perm, ReorderDirection::kForward)
                                : x;
        cache.time_feat = time_features(t);
        cache.blocks.assign(size_t(geom.depth), BlockCache{});
        cache.mask_sparsity_sum = 0.0;
        cache.mask_count = 0;

        Tensor h = nn::linear(cache.x_reordered, params.in);
        {
            Tensor tf({1, kTimeFeatures}, std::vector<float>(cache.time_feat.begin(),
                                                             cache.time_feat.end()));
            Tensor temb = nn::linear(tf, params.time);  // [1, width]
            for (int64_t s = 0; s < s_len; ++s)
                for (int64_t m = 0; m < width; ++m)
                    h.at2(s, m) += temb.at2(0, m);
        }
        cache.x_embedded = h;

        for (int b = 0; b < geom.depth; ++b) {
            BlockCache& bc = cache.blocks[size_t(b)];
            const BlockP& bp = params.blocks[size_t(b)];

            bc.y1 = nn::layer_norm(h, bp.ln1, bc.ln1);
            bc.q3 = nn::split_heads(nn::linear(bc.y1, bp.q), geom.heads, geom.dim);
            bc.k3 = nn::split_heads(nn::linear(bc.y1, bp.k), geom.heads, geom.dim);
            bc.v3 = nn::split_heads(nn::linear(bc.y1, bp.v), geom.heads, geom.dim);

            Tensor o3;
            if (pm.mode.kind == AttentionKind::kIdentity) {
                o3 = bc.v3;
            } else {
                bc.mask = layer_mask(bc.q3, bc.k3, pm, attn_scale, block_n);
                cache.mask_sparsity_sum += sparsity(bc.mask);
                cache.mask_count += 1;
                o3 = block_sparse_attention({bc.q3, bc.k3, bc.v3, attn_scale}, bc.mask,
                                            block_n);
            }
            bc.attn_merged = nn::merge_heads(o3);
            Tensor a = nn::linear(bc.attn_merged, bp.o);
            for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += a.data[i];

            bc.y2 = nn::layer_norm(h, bp.ln2, bc.ln2);
            bc.h1 = nn::linear(bc.y2, bp.fc1);
            bc.act = bc.h1;
            for (float& v : bc.act.data) v = nn::gelu(v);
            Tensor mo = nn::linear(bc.act, bp.fc2);
            for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += mo.data[i];
        }

        cache.yf = nn::layer_norm(h, params.lnf, cache.lnf);
        Tensor out_r = nn::linear(cache.yf, params.out);
        return use_reorder ? apply_reorder(out_r, perm, ReorderDirection::kInverse)
                           : out_r;
    }

    // dout: gradient wrt the raster-order output. Accumulates into `grads`.
    void backward(const Tensor& dout, const PreparedMode& pm, const ForwardCache& cache,
                  ModelParams& grads) const {
        const int64_t block_n = geom.grid.block_tokens();
        const float attn_scale = 1.0f / std::sqrt(float(geom.dim));

        Tensor dy_r = use_reorder
                          ? apply_reorder(dout, perm, ReorderDirection::kForward)
                          : dout;
        Tensor dyf = nn::linear_backward(cache.yf, params.out, dy_r, grads.out);
        Tensor dh = nn::layer_norm_backward(params.lnf, cache.lnf, dyf, grads.lnf);

        for (int b = geom.depth - 1; b >= 0; --b) {
            const BlockCache& bc = cache.blocks[size_t(b)];
            const BlockP& bp = params.blocks[size_t(b)];
            BlockP& bg = grads.blocks[size_t(b)];

            // mlp sublayer
            Tensor dact = nn::linear_backward(bc.act, bp.fc2, dh, bg.fc2);
            Tensor dh1 = dact;
            for (size_t i = 0; i < dh1.data.size(); ++i)
                dh1.data[i] *= nn::gelu_grad(bc.h1.data[i]);
            Tensor dy2 = nn::linear_backward(bc.y2, bp.fc1, dh1, bg.fc1);
            Tensor dres = nn::layer_norm_backward(bp.ln2, bc.ln2, dy2, bg.ln2);
            for (size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += dres.data[i];

            // attention sublayer
            Tensor do_merged = nn::linear_backward(bc.attn_merged, bp.o, dh, bg.o);
            Tensor do3 = nn::split_heads(do_merged, geom.heads, geom.dim);
            Tensor dq3, dk3, dv3;
            if (pm.mode.kind == AttentionKind::kIdentity) {
                dq3 = Tensor::zeros(do3.shape);
                dk3 = Tensor::zeros(do3.shape);
                dv3 = do3;
            } else {
                AttentionGrad ag = attention_backward({bc.q3, bc.k3, bc.v3, attn_scale},
                                                      &bc.mask, block_n, do3);
                dq3 = std::move(ag.dq);
                dk3 = std::move(ag.dk);
                dv3 = std::move(ag.dv);
            }
            Tensor dy1 = nn::linear_backward(bc.y1, bp.q, nn::merge_heads(dq3), bg.q);
            {
                Tensor dk_m = nn::linear_backward(bc.y1, bp.k, nn::merge_heads(dk3), bg.k);
                Tensor dv_m = nn::linear_backward(bc.y1, bp.v, nn::merge_heads(dv3), bg.v);
                for (size_t i = 0; i < dy1.data.size(); ++i)
                    dy1.data[i] += dk_m.data[i] + dv_m.data[i];
            }
            Tensor dres1 = nn::layer_norm_backward(bp.ln1, bc.ln1, dy1, bg.ln1);
            for (size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += dres1.data[i];
        }

        // input projection and time embedding
        {
            const int64_t s_len = geom.grid.seq_len();
            const int width = geom.model_width();
            Tensor dtemb = Tensor::zeros({1, int64_t(width)});
            for (int64_t s = 0; s < s_len; ++s)
                for (int64_t m = 0; m < width; ++m)
                    dtemb.at2(0, m) += dh.at2(s, m);
            Tensor tf({1, kTimeFeatures}, std::vector<float>(cache.time_feat.begin(),
                                                             cache.time_feat.end()));
            nn::linear_backward(tf, params.time, dtemb, grads.time);
            nn::linear_backward(cache.x_reordered, params.in, dh, grads.in);
        }
    }

    static std::vector<float> time_features(double t) {
        std::vector<float> f(size_t(kTimeFeatures), 0.0f);
        double freq = 1.0;
        for (int j = 0; j < kTimeFeatures / 2; ++j) {
            f[size_t(2 * j)] = float(std::sin(2.0 * 3.14159265358979323846 * freq * t));
            f[size_t(2 * j + 1)] = float(std::cos(2.0 * 3.14159265358979323846 * freq * t));
            freq *= 2.0;
        }
        return f;
    }

    ModelParams make_like(float fill = 0.0f) const {
        ModelParams g = params;
        visit_params([&](const std::string&, Tensor& t) {
            std::fill(t.data.begin(), t.data.end(), fill);
        }, g);
        return g;
    }

private:
    BlockMask layer_mask(const Tensor& q3, const Tensor& k3, const PreparedMode& pm,
                         float scale, int64_t block_n) const {
        switch (pm.mode.kind) {
            case AttentionKind::kFull: return pm.full;
            case AttentionKind::kNabla:
                return nabla_mask(q3, k3, NablaParams{pm.mode.thr, block_n, scale});
            case AttentionKind::kNablaSta:
                return join_masks(
                    nabla_mask(q3, k3, NablaParams{pm.mode.thr, block_n, scale}), pm.sta);
            case AttentionKind::kIdentity: break;
        }
        throw ParamError("identity mode has no mask");
    }

    void allocate() {
        const int64_t w = geom.model_width();
        const int64_t c = geom.channels;
        auto lin = [](int64_t in, int64_t out) {
            return LinearP{Tensor::zeros({in, out}), Tensor::zeros({out})};
        };
        auto ln = [&] { return LnP{Tensor::zeros({w}), Tensor::zeros({w})}; };
        params.in = lin(c, w);
        params.time = lin(kTimeFeatures, w);
        params.blocks.clear();
        for (int b = 0; b < geom.depth; ++b) {
            BlockP blk;
            blk.ln1 = ln();
            blk.q = lin(w, w);
            blk.k = lin(w, w);
            blk.v = lin(w, w);
            blk.o = lin(w, w);
            blk.ln2 = ln();
            blk.fc1 = lin(w, 4 * w);
            blk.fc2 = lin(4 * w, w);
            params.blocks.push_back(std::move(blk));
        }
        params.lnf = ln();
        params.out = lin(w, c);
    }

    void init_weights(uint64_t seed) {
        Rng rng(seed);
        visit_params([&](const std::string& name, Tensor& t) {
            const bool is_gain = name.size() > 2 && name.substr(name.size() - 2) == ".g";
            const bool is_bias = name.size() > 2 && name.substr(name.size() - 2) == ".b" &&
                                 t.rank() == 1;
            if (is_gain) {
                std::fill(t.data.begin(), t.data.end(), 1.0f);
            } else if (is_bias) {
                std::fill(t.data.begin(), t.data.end(), 0.0f);
            } else {
                const float std_dev =
                    std::sqrt(2.0f / float(t.extent(0) + t.extent(1)));
                for (float& v : t.data) v = rng.normal_f() * std_dev;
            }
        }, params);
    }
};

// ---- checkpoints -------------------------------------------------------------

inline void save_checkpoint(const ToyDenoiser& model, const std::string& dir) {
    std::string manifest = "NABLA-CKPT 1\n";
    manifest += "grid " + std::to_string(model.geom.grid.t_frames) + " " +
                std::to_string(model.geom.grid.height) + " " +
                std::to_string(model.geom.grid.width) + " " +
                std::to_string(model.geom.grid.patch) + "\n";
    manifest += "depth " + std::to_string(model.geom.depth) + "\n";
    manifest += "heads " + std::to_string(model.geom.heads) + "\n";
    manifest += "dim " + std::to_string(model.geom.dim) + "\n";
    manifest += "channels " + std::to_string(model.geom.channels) + "\n";

    visit_params([&](const std::string& name, const Tensor& t) {
        const std::string file = name + ".ntsr";
        save_tensor(t, dir + "/" + file);
        manifest += "param " + name + " " + file + "\n";
    }, model.params);

    std::ofstream out(dir + "/manifest.txt", std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint manifest in " + dir);
    out << manifest;
    out.flush();
    if (!out) throw IoError("manifest write failed in " + dir);
}

inline ToyDenoiser load_checkpoint(const std::string& dir) {
    std::ifstream in(dir + "/manifest.txt");
    if (!in) throw IoError("missing checkpoint manifest in " + dir);
    std::string line;
    if (!std::getline(in, line) || line != "NABLA-CKPT 1")
        throw FormatError("bad checkpoint manifest header");

    ModelGeom geom;
    std::vector<std::pair<std::string, std::string>> files;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "grid") {
            ls >> geom.grid.t_frames >> geom.grid.height >> geom.grid.width >>
                geom.grid.patch;
        } else if (key == "depth") {
            ls >> geom.depth;
        } else if (key == "heads") {
            ls >> geom.heads;
        } else if (key == "dim") {
            ls >> geom.dim;
        } else if (key == "channels") {
            ls >> geom.channels;
        } else if (key == "param") {
            std::string name, file;
            ls >> name >> file;
            files.emplace_back(name, file);
        } else {
            throw FormatError("unknown manifest key: " + key);
        }
        if (!ls) throw FormatError("malformed manifest line: " + line);
    }

    ToyDenoiser model(geom, 0);
    size_t loaded = 0;
    visit_params([&](const std::string& name, Tensor& t) {
        for (const auto& [pname, file] : files) {
            if (pname == name) {
                Tensor loaded_t = load_tensor(dir + "/" + file);
                if (loaded_t.shape != t.shape)
                    throw FormatError("checkpoint tensor " + name + " has shape " +
                                      shape_string(loaded_t) + ", expected " +
                                      shape_string(t));
                t = std::move(loaded_t);
                ++loaded;
                return;
            }
        }
        throw FormatError("checkpoint missing parameter " + name);
    }, model.params);
    if (loaded != files.size())
        throw FormatError("checkpoint manifest lists unknown parameters");
    return model;
}

}  // namespace nabla
