#include <catch2/catch_amalgamated.hpp>

#include "mimood/masks.hpp"

using namespace mimood;

namespace {

TokenGrid random_grid(int h, int w, int k_size, Rng& rng) {
    TokenGrid g(h, w);
    for (auto& c : g.cells) c = rng.uniform_int(k_size);
    return g;
}

float coverage(const MaskGrid& m) {
    size_t set = 0;
    for (auto c : m.cells) set += c;
    return static_cast<float>(set) / static_cast<float>(m.size());
}

}  // namespace

TEST_CASE("random_walk_mask is deterministic given the rng seed") {
    masks::BrushParams p;
    Rng a(5), b(5);
    auto ma = masks::random_walk_mask(16, 16, p, a);
    auto mb = masks::random_walk_mask(16, 16, p, b);
    REQUIRE(ma == mb);
}

TEST_CASE("random_walk_mask hits the coverage target range") {
    masks::BrushParams p;
    p.min_coverage = 0.3f;
    p.max_coverage = 0.5f;
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        auto m = masks::random_walk_mask(16, 16, p, rng);
        float c = coverage(m);
        REQUIRE(c >= 0.3f);
        REQUIRE(c <= 0.5f);
    }
}

TEST_CASE("degenerate brush: single walk, single step, width 1") {
    masks::BrushParams p;
    p.min_walks = p.max_walks = 1;
    p.min_steps = p.max_steps = 1;
    p.min_width = p.max_width = 1;
    p.min_coverage = 1.0f / 256.0f;
    p.max_coverage = 2.0f / 256.0f;
    Rng rng(3);
    auto m = masks::random_walk_mask(16, 16, p, rng);
    size_t set = 0;
    for (auto c : m.cells) set += c;
    REQUIRE(set == 1);
}

TEST_CASE("random_walk_mask validates parameter ranges") {
    masks::BrushParams p;
    p.min_coverage = 0.6f;
    p.max_coverage = 0.4f;
    Rng rng(1);
    REQUIRE_THROWS_AS(masks::random_walk_mask(16, 16, p, rng), ConfigError);
    p = {};
    REQUIRE_THROWS_AS(masks::random_walk_mask(2, 16, p, rng), ConfigError);
}

TEST_CASE("per-cell marginal inclusion probability is not degenerate") {
    masks::BrushParams p;
    Rng rng(13);
    std::vector<double> counts(16 * 16, 0.0);
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        auto m = masks::random_walk_mask(16, 16, p, rng);
        for (size_t j = 0; j < m.cells.size(); ++j) counts[j] += m.cells[j];
    }
    double mean = 0.0;
    for (double c : counts) mean += c;
    mean /= counts.size();
    for (double c : counts) {
        REQUIRE(c >= 0.5 * mean);
        REQUIRE(c <= 2.0 * mean);
    }
}

TEST_CASE("apply_mask_token: identity, saturation, checkerboard") {
    Rng rng(7);
    auto tokens = random_grid(16, 16, 128, rng);

    MaskGrid zeros(16, 16, 0);
    auto same = masks::apply_mask_token(tokens, zeros, 128);
    for (size_t i = 0; i < same.size(); ++i) REQUIRE(same[i] == tokens.cells[i]);

    MaskGrid ones(16, 16, 1);
    auto all = masks::apply_mask_token(tokens, ones, 128);
    for (auto v : all) REQUIRE(v == 128);

    MaskGrid checker(16, 16, 0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) checker.at(y, x) = (y + x) % 2;
    auto half = masks::apply_mask_token(tokens, checker, 128);
    int masked = 0;
    for (auto v : half) masked += v == 128;
    REQUIRE(masked == 128);
}

TEST_CASE("apply_mask_token rejects shape mismatch") {
    TokenGrid t(16, 16);
    MaskGrid m(8, 8, 0);
    REQUIRE_THROWS_AS(masks::apply_mask_token(t, m, 128), ConfigError);
}

TEST_CASE("corrupt_tokens: identity under empty mask") {
    Rng rng(9);
    auto tokens = random_grid(16, 16, 128, rng);
    MaskGrid zeros(16, 16, 0);
    REQUIRE(masks::corrupt_tokens(tokens, zeros, 128, rng) == tokens);
}

TEST_CASE("corrupt_tokens: collision rate under full mask is about 1/K") {
    const int k = 64;
    Rng rng(21);
    TokenGrid tokens(10, 10);
    MaskGrid ones(10, 10, 1);
    size_t same = 0, total = 0;
    for (int trial = 0; trial < 100; ++trial) {
        for (auto& c : tokens.cells) c = rng.uniform_int(k);
        auto out = masks::corrupt_tokens(tokens, ones, k, rng);
        for (size_t i = 0; i < out.cells.size(); ++i) {
            same += out.cells[i] == tokens.cells[i];
            ++total;
        }
    }
    // Binomial(n=10000, p=1/64): 3 sigma is about 0.0037.
    double rate = static_cast<double>(same) / static_cast<double>(total);
    REQUIRE(rate == Catch::Approx(1.0 / k).margin(3.0 * std::sqrt((1.0 / k) * (1 - 1.0 / k) / total)));
}

TEST_CASE("locality: masked-only mutation for both transforms, many seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        auto tokens = random_grid(8, 8, 32, rng);
        MaskGrid m(8, 8, 0);
        for (auto& c : m.cells) c = rng.uniform() < 0.3 ? 1 : 0;

        auto masked = masks::apply_mask_token(tokens, m, 32);
        auto corrupted = masks::corrupt_tokens(tokens, m, 32, rng);
        for (size_t i = 0; i < tokens.cells.size(); ++i) {
            if (!m.cells[i]) {
                REQUIRE(masked[i] == tokens.cells[i]);
                REQUIRE(corrupted.cells[i] == tokens.cells[i]);
            } else {
                REQUIRE(masked[i] == 32);
                REQUIRE(corrupted.cells[i] >= 0);
                REQUIRE(corrupted.cells[i] < 32);
            }
        }
    }
}

TEST_CASE("random_walk_mask never paints out of bounds") {
    // Guarded implicitly by Grid bounds; verify coverage stays sane on a
    // non-square grid as well.
    masks::BrushParams p;
    Rng rng(33);
    auto m = masks::random_walk_mask(8, 24, p, rng);
    REQUIRE(m.h == 8);
    REQUIRE(m.w == 24);
    float c = coverage(m);
    REQUIRE(c >= p.min_coverage);
    REQUIRE(c <= p.max_coverage);
}
