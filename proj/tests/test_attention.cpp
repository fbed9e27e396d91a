#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "nabla/attention.hpp"
#include "nabla/masks.hpp"
#include "nabla/rng.hpp"
#include "oracles.hpp"

using namespace nabla;

namespace {

Tensor random_tensor(Rng& rng, int64_t heads, int64_t seq, int64_t dim,
                     float lo = -1.0f, float hi = 1.0f) {
    Tensor t = Tensor::zeros({heads, seq, dim});
    for (float& v : t.data) v = rng.uniform_f(lo, hi);
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

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(double(a.data[i]) - double(b.data[i])));
    return worst;
}

}  // namespace

TEST_CASE("dense attention matches the scalar oracle", "[attention]") {
    Rng rng(101);
    for (int trial = 0; trial < 25; ++trial) {
        const int64_t heads = 1 + int64_t(rng.uniform() * 3);
        const int64_t seq = 4 + int64_t(rng.uniform() * 28);
        const int64_t dim = 1 + int64_t(rng.uniform() * 8);
        const float scale = 1.0f / std::sqrt(float(dim));
        const Tensor q = random_tensor(rng, heads, seq, dim);
        const Tensor k = random_tensor(rng, heads, seq, dim);
        const Tensor v = random_tensor(rng, heads, seq, dim);
        const Tensor got = dense_attention({q, k, v, scale});
        const Tensor want = oracle::attention(q, k, v, scale);
        REQUIRE(max_abs_diff(got, want) <= 1e-6);
    }
}

TEST_CASE("attention rows are convex combinations of values", "[attention]") {
    Rng rng(103);
    const Tensor q = random_tensor(rng, 1, 8, 4);
    const Tensor k = random_tensor(rng, 1, 8, 4);
    Tensor v = Tensor::zeros({1, 8, 4});
    for (int64_t j = 0; j < 8; ++j)
        for (int64_t d = 0; d < 4; ++d) v.at3(0, j, d) = float(j) + 0.1f * float(d);
    const Tensor out = dense_attention({q, k, v, 0.5f});
    for (int64_t i = 0; i < 8; ++i)
        for (int64_t d = 0; d < 4; ++d) {
            CHECK(out.at3(0, i, d) >= 0.0f + 0.1f * float(d) - 1e-5f);
            CHECK(out.at3(0, i, d) <= 7.0f + 0.1f * float(d) + 1e-5f);
        }
}

TEST_CASE("masked and block-sparse kernels agree with the oracle", "[attention]") {
    Rng rng(107);
    for (int trial = 0; trial < 25; ++trial) {
        const int64_t heads = 1 + int64_t(rng.uniform() * 2);
        const int64_t block_n = (trial % 2) ? 4 : 8;
        const int64_t blocks = 2 + int64_t(rng.uniform() * 6);
        const int64_t seq = blocks * block_n;
        const int64_t dim = 2 + int64_t(rng.uniform() * 6);
        const float scale = 1.0f / std::sqrt(float(dim));
        const Tensor q = random_tensor(rng, heads, seq, dim);
        const Tensor k = random_tensor(rng, heads, seq, dim);
        const Tensor v = random_tensor(rng, heads, seq, dim);
        const BlockMask mask = random_mask(rng, heads, blocks, 0.55);

        const Tensor want = oracle::attention(q, k, v, scale, &mask, block_n);
        const Tensor masked = masked_dense_attention({q, k, v, scale}, mask, block_n);
        const Tensor sparse = block_sparse_attention({q, k, v, scale}, mask, block_n);
        REQUIRE(max_abs_diff(masked, want) <= 1e-6);
        REQUIRE(max_abs_diff(sparse, want) <= 1e-6);
        REQUIRE(max_abs_diff(sparse, masked) <= 1e-6);
    }
}

TEST_CASE("an all-true mask reproduces dense attention closely", "[attention]") {
    Rng rng(109);
    const Tensor q = random_tensor(rng, 2, 32, 4);
    const Tensor k = random_tensor(rng, 2, 32, 4);
    const Tensor v = random_tensor(rng, 2, 32, 4);
    const BlockMask full = BlockMask::all_true(2, 8, 8);
    const Tensor dense = dense_attention({q, k, v, 0.5f});
    const Tensor sparse = block_sparse_attention({q, k, v, 0.5f}, full, 4);
    CHECK(max_abs_diff(dense, sparse) <= 1e-6);
}

TEST_CASE("a single-head mask broadcasts across heads", "[attention]") {
    Rng rng(113);
    const Tensor q = random_tensor(rng, 3, 16, 4);
    const Tensor k = random_tensor(rng, 3, 16, 4);
    const Tensor v = random_tensor(rng, 3, 16, 4);
    const BlockMask shared = random_mask(rng, 1, 4, 0.6);
    const Tensor got = block_sparse_attention({q, k, v, 0.5f}, shared, 4);
    const Tensor want = oracle::attention(q, k, v, 0.5f, &shared, 4);
    CHECK(max_abs_diff(got, want) <= 1e-6);
}

TEST_CASE("masked blocks are never touched", "[attention]") {
    // keys under excluded blocks may hold huge values without affecting the
    // result, because excluded tiles are skipped rather than discounted
    Rng rng(127);
    const int64_t block_n = 4, blocks = 4, seq = 16;
    const Tensor q = random_tensor(rng, 1, seq, 4);
    Tensor k = random_tensor(rng, 1, seq, 4);
    Tensor v = random_tensor(rng, 1, seq, 4);
    BlockMask mask = BlockMask::all_true(1, blocks, blocks);
    for (int64_t r = 0; r < blocks; ++r) mask.set(0, r, 3, false);

    const Tensor base = block_sparse_attention({q, k, v, 0.5f}, mask, block_n);
    for (int64_t j = 12; j < 16; ++j)
        for (int64_t d = 0; d < 4; ++d) {
            k.at3(0, j, d) = 1e30f;
            v.at3(0, j, d) = -1e30f;
        }
    const Tensor poked = block_sparse_attention({q, k, v, 0.5f}, mask, block_n);
    CHECK(equal(base, poked));
}

TEST_CASE("empty mask rows are rejected", "[attention]") {
    Rng rng(131);
    const Tensor q = random_tensor(rng, 1, 8, 2);
    const Tensor k = random_tensor(rng, 1, 8, 2);
    const Tensor v = random_tensor(rng, 1, 8, 2);
    BlockMask mask(1, 2, 2);
    mask.set(0, 0, 0, true);  // row 1 left empty
    CHECK_THROWS_AS(block_sparse_attention({q, k, v, 1.0f}, mask, 4), ValidationError);
    CHECK_THROWS_AS(masked_dense_attention({q, k, v, 1.0f}, mask, 4), ValidationError);
}

TEST_CASE("geometry and input validation", "[attention]") {
    Rng rng(137);
    const Tensor q = random_tensor(rng, 1, 8, 2);
    const Tensor k = random_tensor(rng, 1, 8, 2);
    const Tensor v = random_tensor(rng, 1, 8, 2);

    Tensor short_k = random_tensor(rng, 1, 4, 2);
    CHECK_THROWS_AS(dense_attention({q, short_k, v, 1.0f}), GeometryError);

    Tensor bad = q;
    bad.data[3] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(dense_attention({bad, k, v, 1.0f}), ValidationError);

    const BlockMask mask = BlockMask::all_true(1, 2, 2);
    CHECK_THROWS_AS(block_sparse_attention({q, k, v, 1.0f}, mask, 3), GeometryError);
    const BlockMask two_heads = BlockMask::all_true(2, 2, 2);
    CHECK_THROWS_AS(block_sparse_attention({q, k, v, 1.0f}, two_heads, 4),
                    GeometryError);  // 2 mask heads cannot serve 1 q head
    const BlockMask three_heads = BlockMask::all_true(3, 2, 2);
    const Tensor q2 = random_tensor(rng, 2, 8, 2);
    const Tensor k2 = random_tensor(rng, 2, 8, 2);
    const Tensor v2 = random_tensor(rng, 2, 8, 2);
    CHECK_THROWS_AS(block_sparse_attention({q2, k2, v2, 1.0f}, three_heads, 4),
                    GeometryError);
}

TEST_CASE("flop counters are exact", "[attention]") {
    Rng rng(139);
    const int64_t heads = 2, block_n = 4, blocks = 5, seq = 20, dim = 8;
    const Tensor q = random_tensor(rng, heads, seq, dim);
    const Tensor k = random_tensor(rng, heads, seq, dim);
    const Tensor v = random_tensor(rng, heads, seq, dim);
    const BlockMask mask = random_mask(rng, heads, blocks, 0.5);

    AttnCounters counters;
    block_sparse_attention({q, k, v, 0.35f}, mask, block_n, &counters);
    const uint64_t tiles = mask.popcount();
    CHECK(counters.score_madds == tiles * uint64_t(block_n * block_n * dim));
    CHECK(counters.output_madds == tiles * uint64_t(block_n * block_n * dim));

    AttnCounters full_counters;
    const BlockMask full = BlockMask::all_true(heads, blocks, blocks);
    block_sparse_attention({q, k, v, 0.35f}, full, block_n, &full_counters);
    CHECK(full_counters.score_madds == dense_score_madds(heads, seq, dim));
    CHECK(full_counters.output_madds == dense_score_madds(heads, seq, dim));
}
