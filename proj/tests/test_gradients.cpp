#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nabla/attention.hpp"
#include "nabla/rng.hpp"
#include "oracles.hpp"

using namespace nabla;

namespace {

Tensor random_tensor(Rng& rng, int64_t heads, int64_t seq, int64_t dim) {
    Tensor t = Tensor::zeros({heads, seq, dim});
    for (float& v : t.data) v = rng.uniform_f(-1.0f, 1.0f);
    return t;
}

BlockMask random_mask(Rng& rng, int64_t heads, int64_t n, double density) {
    BlockMask m(heads, n, n);
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t r = 0; r < n; ++r) {
            for (int64_t c = 0; c < n; ++c)
                if (rng.uniform() < density) m.set(h, r, c, true);
            if (m.row_popcount(h, r) == 0)
                m.set(h, r, int64_t(rng.uniform() * double(n)), true);
        }
    return m;
}

// L = sum(out * weights); dL/dout = weights. Central finite differences on
// the double-precision oracle forward.
struct FdProbe {
    const Tensor &q, &k, &v;
    float scale;
    const BlockMask* mask;
    int64_t block_n;
    std::vector<double> weights;

    double loss(const std::vector<double>& q_over, const std::vector<double>& k_over,
                const std::vector<double>& v_over) const {
        const std::vector<double> out =
            oracle::attention_f64(q, k, v, double(scale), mask, block_n, q_over,
                                  k_over, v_over);
        double acc = 0.0;
        for (size_t i = 0; i < out.size(); ++i) acc += out[i] * weights[i];
        return acc;
    }

    // central difference wrt element `e` of input `which` (0=q, 1=k, 2=v)
    double fd(int which, size_t e, double eps = 1e-3) const {
        auto base = [&](const Tensor& t) {
            return std::vector<double>(t.data.begin(), t.data.end());
        };
        std::vector<double> qd = base(q), kd = base(k), vd = base(v);
        std::vector<double>& target = which == 0 ? qd : which == 1 ? kd : vd;
        target[e] += eps;
        const double up = loss(qd, kd, vd);
        target[e] -= 2.0 * eps;
        const double down = loss(qd, kd, vd);
        return (up - down) / (2.0 * eps);
    }
};

bool close(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    return diff <= 1e-5 + 1e-3 * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace

TEST_CASE("unmasked backward matches finite differences", "[gradients]") {
    Rng rng(211);
    for (int trial = 0; trial < 6; ++trial) {
        const int64_t heads = 1 + trial % 2, seq = 8, dim = 3;
        const Tensor q = random_tensor(rng, heads, seq, dim);
        const Tensor k = random_tensor(rng, heads, seq, dim);
        const Tensor v = random_tensor(rng, heads, seq, dim);
        const float scale = 0.7f;

        Tensor dout = Tensor::zeros(q.shape);
        for (float& x : dout.data) x = rng.uniform_f(-1.0f, 1.0f);
        const AttentionGrad grad = attention_backward({q, k, v, scale}, nullptr, 1, dout);

        FdProbe probe{q, k, v, scale, nullptr, 1,
                      std::vector<double>(dout.data.begin(), dout.data.end())};
        bool all_ok = true;
        for (int which = 0; which < 3; ++which) {
            const Tensor& g = which == 0 ? grad.dq : which == 1 ? grad.dk : grad.dv;
            for (size_t e = 0; e < g.data.size(); ++e)
                all_ok &= close(double(g.data[e]), probe.fd(which, e));
        }
        REQUIRE(all_ok);
    }
}

TEST_CASE("masked backward matches finite differences", "[gradients]") {
    Rng rng(223);
    for (int trial = 0; trial < 6; ++trial) {
        const int64_t heads = 1 + trial % 2, block_n = 4, blocks = 3;
        const int64_t seq = block_n * blocks, dim = 2;
        const Tensor q = random_tensor(rng, heads, seq, dim);
        const Tensor k = random_tensor(rng, heads, seq, dim);
        const Tensor v = random_tensor(rng, heads, seq, dim);
        const BlockMask mask = random_mask(rng, trial % 2 ? heads : 1, blocks, 0.5);
        const float scale = 0.6f;

        Tensor dout = Tensor::zeros(q.shape);
        for (float& x : dout.data) x = rng.uniform_f(-1.0f, 1.0f);
        const AttentionGrad grad =
            attention_backward({q, k, v, scale}, &mask, block_n, dout);

        FdProbe probe{q, k, v, scale, &mask, block_n,
                      std::vector<double>(dout.data.begin(), dout.data.end())};
        bool all_ok = true;
        for (int which = 0; which < 3; ++which) {
            const Tensor& g = which == 0 ? grad.dq : which == 1 ? grad.dk : grad.dv;
            for (size_t e = 0; e < g.data.size(); ++e)
                all_ok &= close(double(g.data[e]), probe.fd(which, e));
        }
        REQUIRE(all_ok);
    }
}

TEST_CASE("gradients vanish for values in fully masked columns", "[gradients]") {
    Rng rng(227);
    const int64_t block_n = 4, blocks = 3, seq = 12;
    const Tensor q = random_tensor(rng, 1, seq, 2);
    const Tensor k = random_tensor(rng, 1, seq, 2);
    const Tensor v = random_tensor(rng, 1, seq, 2);
    BlockMask mask = BlockMask::all_true(1, blocks, blocks);
    for (int64_t r = 0; r < blocks; ++r) mask.set(0, r, 2, false);

    Tensor dout = Tensor::zeros(q.shape);
    for (float& x : dout.data) x = rng.uniform_f(-1.0f, 1.0f);
    const AttentionGrad grad = attention_backward({q, k, v, 1.0f}, &mask, block_n, dout);
    for (int64_t j = 8; j < 12; ++j)
        for (int64_t d = 0; d < 2; ++d) {
            CHECK(grad.dk.at3(0, j, d) == 0.0f);
            CHECK(grad.dv.at3(0, j, d) == 0.0f);
        }
}

TEST_CASE("backward validates dout shape", "[gradients]") {
    Rng rng(229);
    const Tensor q = random_tensor(rng, 1, 4, 2);
    const Tensor k = random_tensor(rng, 1, 4, 2);
    const Tensor v = random_tensor(rng, 1, 4, 2);
    const Tensor bad = random_tensor(rng, 1, 4, 3);
    CHECK_THROWS_AS(attention_backward({q, k, v, 1.0f}, nullptr, 1, bad),
                    GeometryError);
}
