#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "nabla/layout.hpp"
#include "oracles.hpp"

using namespace nabla;

TEST_CASE("grid validation", "[layout]") {
    CHECK_THROWS_AS((TokenGrid{0, 4, 4, 2}.validate()), GeometryError);
    CHECK_THROWS_AS((TokenGrid{2, 5, 4, 2}.validate()), GeometryError);  // P !| H
    CHECK_THROWS_AS((TokenGrid{2, 4, 6, 4}.validate()), GeometryError);  // P !| W
    CHECK_THROWS_AS((TokenGrid{2, 4, 4, 0}.validate()), GeometryError);
    CHECK_NOTHROW(TokenGrid{2, 4, 6, 2}.validate());

    const TokenGrid g{4, 8, 8, 2};
    CHECK(g.seq_len() == 256);
    CHECK(g.block_tokens() == 4);
    CHECK(g.num_blocks() == 64);
    CHECK(g.t_blocks() == 4);
    CHECK(g.h_blocks() == 4);
    CHECK(g.w_blocks() == 4);
}

TEST_CASE("hand-checked permutation for one frame of 4x4, patch 2", "[layout]") {
    const Permutation perm = build_permutation(TokenGrid{1, 4, 4, 2});
    // patches visit row-major; inside a patch rows then columns
    const std::vector<int64_t> want = {0, 1, 4, 5,  2,  3,  6,  7,
                                       8, 9, 12, 13, 10, 11, 14, 15};
    CHECK(perm.forward == want);
    for (int64_t i = 0; i < perm.size(); ++i)
        CHECK(perm.inverse[size_t(perm.forward[size_t(i)])] == i);
}

TEST_CASE("patch 1 is the identity permutation", "[layout]") {
    const Permutation perm = build_permutation(TokenGrid{3, 5, 7, 1});
    for (int64_t i = 0; i < perm.size(); ++i) {
        CHECK(perm.forward[size_t(i)] == i);
        CHECK(perm.inverse[size_t(i)] == i);
    }
}

TEST_CASE("round trip and block semantics across grids", "[layout]") {
    for (int64_t p : {int64_t(1), int64_t(2), int64_t(4)}) {
        for (int64_t t = 1; t <= 4; ++t) {
            for (int64_t h = p; h <= 16; h += p) {
                for (int64_t w = p; w <= 16; w += p) {
                    const TokenGrid g{t, h, w, p};
                    const Permutation perm = build_permutation(g);

                    Tensor x = Tensor::zeros({g.seq_len(), 2});
                    std::iota(x.data.begin(), x.data.end(), 0.0f);
                    const Tensor fwd = apply_reorder(x, perm, ReorderDirection::kForward);
                    const Tensor back =
                        apply_reorder(fwd, perm, ReorderDirection::kInverse);
                    REQUIRE(equal(back, x));

                    bool matches_oracle = true;
                    for (int64_t pos = 0; pos < g.seq_len(); ++pos)
                        matches_oracle &= perm.forward[size_t(pos)] ==
                                          oracle::reorder_source_index(g, pos);
                    REQUIRE(matches_oracle);

                    // each block of P*P consecutive reordered tokens is one
                    // frame x one patch
                    const int64_t n = g.block_tokens();
                    bool blocks_ok = true;
                    for (int64_t b = 0; b < g.num_blocks(); ++b) {
                        const int64_t first = perm.forward[size_t(b * n)];
                        const int64_t frame = first / (h * w);
                        const int64_t row0 = (first % (h * w)) / w;
                        const int64_t col0 = first % w;
                        blocks_ok &= row0 % p == 0 && col0 % p == 0;
                        for (int64_t r = 0; r < p; ++r)
                            for (int64_t c = 0; c < p; ++c)
                                blocks_ok &= perm.forward[size_t(b * n + r * p + c)] ==
                                             frame * h * w + (row0 + r) * w + (col0 + c);
                    }
                    REQUIRE(blocks_ok);
                }
            }
        }
    }
}

TEST_CASE("reorder argument checks", "[layout]") {
    const Permutation perm = build_permutation(TokenGrid{1, 2, 2, 1});
    Tensor x = Tensor::zeros({4, 3});
    CHECK_THROWS_AS(apply_reorder(x, perm, ReorderDirection::kForward, 5),
                    GeometryError);
    Tensor wrong = Tensor::zeros({5, 3});
    CHECK_THROWS_AS(apply_reorder(wrong, perm, ReorderDirection::kForward),
                    GeometryError);
}

TEST_CASE("reorder respects a non-leading axis", "[layout]") {
    const TokenGrid g{1, 2, 2, 2};
    const Permutation perm = build_permutation(g);
    Tensor x = Tensor::zeros({3, 4});
    std::iota(x.data.begin(), x.data.end(), 0.0f);
    const Tensor moved = apply_reorder(x, perm, ReorderDirection::kForward, 1);
    for (int64_t r = 0; r < 3; ++r)
        for (int64_t i = 0; i < 4; ++i)
            CHECK(moved.at2(r, i) == x.at2(r, perm.forward[size_t(i)]));
}
