#include <catch2/catch_amalgamated.hpp>

#include "attnlab/rng.hpp"
#include "attnlab/rope.hpp"

using namespace attnlab;

namespace {
Tensor<double> random_heads(std::size_t H, std::size_t L, std::size_t d,
                            std::uint64_t seed) {
    Tensor<double> t({H, L, d});
    Rng rng(seed);
    for (auto& v : t.data) v = rng.normal();
    return t;
}

double dot_row(const Tensor<double>& a, std::size_t i, const Tensor<double>& b,
               std::size_t j) {
    const std::size_t d = a.extent(2);
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a(0, i, k) * b(0, j, k);
    return s;
}
}  // namespace

TEST_CASE("cache frequencies follow theta^(-2i/d)", "[rope]") {
    auto c = build_rope_cache(10000.0, 4, 8);
    CHECK(c.frequency(0) == Catch::Approx(1.0));
    CHECK(c.frequency(1) == Catch::Approx(0.01));
}

TEST_CASE("position zero is the identity rotation", "[rope]") {
    auto c = build_rope_cache(123.0, 6, 4);
    for (std::size_t i = 0; i < c.n_pairs(); ++i) {
        CHECK(c.cos_at(0, i) == 1.0);
        CHECK(c.sin_at(0, i) == 0.0);
    }
    auto x = random_heads(2, 3, 6, 1);
    auto y = apply_rope(x, std::vector<std::size_t>(3, 0), c);
    CHECK(y.data == x.data);  // exact
}

TEST_CASE("first pair of a 2-dim head rotates by exactly p radians", "[rope]") {
    // theta^0 = 1 regardless of theta, so position 1 is a 1-radian rotation
    auto c = build_rope_cache(2'000'000.0, 2, 4);
    CHECK(c.cos_at(1, 0) == Catch::Approx(std::cos(1.0)));
    CHECK(c.sin_at(1, 0) == Catch::Approx(std::sin(1.0)));
    auto x = Tensor<double>::from({1, 1, 2}, {1.0, 0.0});
    auto y = apply_rope(x, {1}, c);
    CHECK(y.data[0] == Catch::Approx(std::cos(1.0)));
    CHECK(y.data[1] == Catch::Approx(std::sin(1.0)));
}

TEST_CASE("odd head_dim is rejected", "[rope]") {
    CHECK_THROWS(build_rope_cache(10000.0, 5, 8));
}

TEST_CASE("positions beyond the cache are rejected", "[rope]") {
    auto c = build_rope_cache(10000.0, 4, 4);
    auto x = random_heads(1, 1, 4, 2);
    CHECK_THROWS(apply_rope(x, {4}, c));
}

TEST_CASE("dot products depend only on relative position", "[rope]") {
    for (std::size_t d : {std::size_t{2}, std::size_t{8}, std::size_t{64}}) {
        auto c = build_rope_cache(10000.0, d, 512);
        auto q = random_heads(1, 1, d, 100 + d);
        auto k = random_heads(1, 1, d, 200 + d);
        for (std::size_t t : {std::size_t{1}, std::size_t{5}, std::size_t{100}}) {
            const std::size_t m = 17, n = 3;
            auto qm = apply_rope(q, {m}, c);
            auto kn = apply_rope(k, {n}, c);
            auto qmt = apply_rope(q, {m + t}, c);
            auto knt = apply_rope(k, {n + t}, c);
            CHECK(std::abs(dot_row(qm, 0, kn, 0) - dot_row(qmt, 0, knt, 0)) < 1e-5);
        }
    }
}

TEST_CASE("rotation preserves the norm of every position", "[rope]") {
    auto c = build_rope_cache(10000.0, 16, 256);
    auto x = random_heads(3, 16, 16, 7);
    auto y = apply_rope(x, iota_positions(16), c);
    for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t i = 0; i < 16; ++i) {
            double nx = 0.0, ny = 0.0;
            for (std::size_t k = 0; k < 16; ++k) {
                nx += x(h, i, k) * x(h, i, k);
                ny += y(h, i, k) * y(h, i, k);
            }
            CHECK(std::sqrt(ny) == Catch::Approx(std::sqrt(nx)).margin(1e-6));
        }
}
