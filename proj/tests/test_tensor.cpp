#include <catch2/catch_amalgamated.hpp>

#include "attnlab/rng.hpp"
#include "attnlab/tensor.hpp"

using namespace attnlab;

TEST_CASE("softmax of equal logits is uniform", "[tensor]") {
    auto out = softmax_stable(Tensor<double>::from({3}, {0.0, 0.0, 0.0}));
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(out.data[i] == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("softmax survives huge logit gaps", "[tensor]") {
    auto out = softmax_stable(Tensor<double>::from({2}, {1000.0, 0.0}));
    CHECK(out.data[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(out.data[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(out.all_finite());
}

TEST_CASE("softmax hand value", "[tensor]") {
    auto out = softmax_stable(Tensor<double>::from({2}, {std::log(2.0), 0.0}));
    CHECK(out.data[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(out.data[1] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("masked softmax zeros excluded entries", "[tensor]") {
    Tensor<std::uint8_t> mask = Tensor<std::uint8_t>::from({4}, {1, 0, 1, 0});
    auto out = softmax_stable(Tensor<double>::from({4}, {1.0, 50.0, 1.0, 50.0}), &mask);
    CHECK(out.data[0] == Catch::Approx(0.5));
    CHECK(out.data[1] == 0.0);
    CHECK(out.data[2] == Catch::Approx(0.5));
    CHECK(out.data[3] == 0.0);
}

TEST_CASE("fully masked row is an error", "[tensor]") {
    Tensor<std::uint8_t> mask = Tensor<std::uint8_t>::from({2}, {0, 0});
    CHECK_THROWS_WITH(softmax_stable(Tensor<double>::from({2}, {1.0, 2.0}), &mask),
                      "empty attention row");
}

TEST_CASE("softmax rows sum to one and shift-invariance holds", "[tensor]") {
    Rng rng(11);
    Tensor<double> x({8, 16});
    for (auto& v : x.data) v = rng.normal(0.0, 3.0);
    auto p = softmax_stable(x);
    Tensor<double> shifted = x;
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t j = 0; j < 16; ++j) shifted(r, j) += 7.25;
    auto q = softmax_stable(shifted);
    for (std::size_t r = 0; r < 8; ++r) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 16; ++j) {
            sum += p(r, j);
            CHECK(p(r, j) == Catch::Approx(q(r, j)).margin(1e-12));
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("layer_norm on an already normalized vector", "[tensor]") {
    auto y = layer_norm(Tensor<double>::from({2}, {1.0, -1.0}),
                        Tensor<double>::from({2}, {1.0, 1.0}), 0.0);
    CHECK(y.data[0] == Catch::Approx(1.0));
    CHECK(y.data[1] == Catch::Approx(-1.0));
}

TEST_CASE("layer_norm collapses a constant vector to zero", "[tensor]") {
    auto y = layer_norm(Tensor<double>::from({2}, {3.7, 3.7}),
                        Tensor<double>::from({2}, {1.0, 1.0}), 1e-6);
    CHECK(y.data[0] == 0.0);
    CHECK(y.data[1] == 0.0);
}

TEST_CASE("layer_norm scales by the gain", "[tensor]") {
    auto y = layer_norm(Tensor<double>::from({2}, {3.0, 1.0}),
                        Tensor<double>::from({2}, {2.0, 2.0}), 0.0);
    CHECK(y.data[0] == Catch::Approx(2.0));
    CHECK(y.data[1] == Catch::Approx(-2.0));
}

TEST_CASE("layer_norm output has zero mean and unit variance", "[tensor]") {
    Rng rng(5);
    const std::size_t n = 64;
    Tensor<double> x({n});
    for (auto& v : x.data) v = rng.normal(1.5, 2.0);
    Tensor<double> gain({n}, 1.0);
    auto y = layer_norm(x, gain, 1e-12);
    double mean = 0.0, var = 0.0;
    for (double v : y.data) mean += v;
    mean /= n;
    for (double v : y.data) var += (v - mean) * (v - mean);
    var /= n;
    CHECK(mean == Catch::Approx(0.0).margin(1e-6));
    CHECK(var == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("matmul matches a hand-computed product", "[tensor]") {
    auto a = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<double>::from({3, 2}, {7, 8, 9, 10, 11, 12});
    auto c = matmul(a, b);
    CHECK(c(0, 0) == Catch::Approx(58.0));
    CHECK(c(0, 1) == Catch::Approx(64.0));
    CHECK(c(1, 0) == Catch::Approx(139.0));
    CHECK(c(1, 1) == Catch::Approx(154.0));
}

TEST_CASE("rng streams are reproducible and split by tag", "[tensor]") {
    Rng a(derive_seed(42, "x"));
    Rng b(derive_seed(42, "x"));
    Rng c(derive_seed(42, "y"));
    CHECK(a.next_u64() == b.next_u64());
    CHECK(a.uniform_int(0, 100) == b.uniform_int(0, 100));
    CHECK(derive_seed(42, "x") != derive_seed(42, "y"));
    (void)c;
}
