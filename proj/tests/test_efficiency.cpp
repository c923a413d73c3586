#include <catch2/catch_amalgamated.hpp>

#include "attnlab/efficiency.hpp"
#include "attnlab/mask.hpp"

using namespace attnlab;

namespace {
LayerSpec full_spec() {
    LayerSpec s;
    s.mask_kind = MaskKind::causal_full;
    return s;
}

LayerSpec swa_spec(std::size_t S) {
    LayerSpec s;
    s.mask_kind = MaskKind::causal_swa;
    s.window = S;
    s.positional = Positional::rope;
    s.theta = 10000.0;
    return s;
}

std::uint64_t popcount_pairs(std::size_t L, const LayerSpec& spec) {
    const AttnMask m = spec.mask(L);
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j)
            if (m.allowed(i, j)) ++n;
    return n;
}

// paper-scale architecture: 32 layers, 8 full + 24 swa at S=4096
ModelConfig paper_config() {
    ModelConfig c;
    c.emb_dim = 4096;
    c.ffn_dim = 28672;
    c.n_layers = 32;
    c.n_query_heads = 32;
    c.n_kv_heads = 8;
    c.vocab_size = 256000;
    c.max_seq = 131072;
    return c;
}

LayerPattern paper_hybrid() {
    return build_layer_pattern(32, {1, 3}, 4096, 10000.0, Variant::rnope_swa);
}

LayerPattern paper_baseline() {
    return build_layer_pattern(32, {1, 0}, 0, 10000.0, Variant::rope_baseline);
}
}  // namespace

TEST_CASE("pair_count closed forms", "[efficiency]") {
    CHECK(pair_count(8, full_spec()) == 36);
    CHECK(pair_count(8, swa_spec(3)) == 21);
    CHECK(pair_count(2, swa_spec(5)) == 3);  // S >= L degenerates to full
}

TEST_CASE("pair_count equals brute-force popcount on sampled instances", "[efficiency]") {
    for (std::size_t L : {std::size_t{1}, std::size_t{7}, std::size_t{33}, std::size_t{64}}) {
        CHECK(pair_count(L, full_spec()) == popcount_pairs(L, full_spec()));
        for (std::size_t S = 1; S <= L; S += 3)
            CHECK(pair_count(L, swa_spec(S)) == popcount_pairs(L, swa_spec(S)));
    }
}

TEST_CASE("kv bytes are inactive below the window", "[efficiency]") {
    auto r = kv_cache_size(paper_hybrid(), paper_config(), 2048, 2);
    CHECK(r.kv_ratio == 1.0);
    CHECK(r.kv_reduction_pct == 0.0);
}

TEST_CASE("kv reduction at 131072 matches the arithmetic oracle", "[efficiency]") {
    auto r = kv_cache_size(paper_hybrid(), paper_config(), 131072, 2);
    // (8*131072 + 24*4096) / (32*131072)
    const double expect = (8.0 * 131072 + 24.0 * 4096) / (32.0 * 131072);
    CHECK(r.kv_ratio == Catch::Approx(expect).margin(1e-12));
    CHECK(r.kv_reduction_pct == Catch::Approx(72.66).margin(0.01));
}

TEST_CASE("1:7 layout approaches an 87.5 percent reduction", "[efficiency]") {
    auto pattern = build_layer_pattern(8, {1, 7}, 4096, 10000.0, Variant::rnope_swa);
    ModelConfig cfg = paper_config();
    cfg.n_layers = 8;
    auto r = kv_cache_size(pattern, cfg, 1000000, 2);
    // limit of f + (1-f) S/L with full fraction f = 1/8
    CHECK(r.kv_reduction_pct == Catch::Approx(87.5).margin(0.5));
}

TEST_CASE("pair ratios against the all-full baseline", "[efficiency]") {
    auto reports = efficiency_report(paper_baseline(), paper_hybrid(), paper_config(),
                                     {65536, 131072});
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].pair_ratio == Catch::Approx(0.341).margin(5e-4));
    CHECK(reports[1].pair_ratio == Catch::Approx(0.296).margin(5e-4));
    CHECK(reports[0].note.find("wall-clock") != std::string::npos);
}

TEST_CASE("identical patterns give unit ratios", "[efficiency]") {
    auto reports =
        efficiency_report(paper_hybrid(), paper_hybrid(), paper_config(), {8192, 131072});
    for (const auto& r : reports) {
        CHECK(r.pair_ratio == 1.0);
        CHECK(r.kv_ratio == 1.0);
    }
}

TEST_CASE("hybrid totals never exceed the baseline", "[efficiency]") {
    auto reports = efficiency_report(paper_baseline(), paper_hybrid(), paper_config(),
                                     {64, 4096, 65536, 1048576});
    for (const auto& r : reports) {
        CHECK(r.total_pairs <= r.baseline_pairs);
        CHECK(r.total_kv_bytes <= r.baseline_kv_bytes);
        CHECK(r.pair_ratio > 0.0);
        CHECK(r.pair_ratio <= 1.0);
    }
}

TEST_CASE("kv ratio decreases in L toward the full-layer fraction", "[efficiency]") {
    double prev = 1.0;
    for (std::size_t L : {std::size_t{1024}, std::size_t{8192}, std::size_t{65536},
                          std::size_t{1048576}, std::size_t{16777216}}) {
        auto r = kv_cache_size(paper_hybrid(), paper_config(), L, 2);
        CHECK(r.kv_ratio <= prev + 1e-12);
        CHECK(r.kv_ratio >= 0.25);  // full-layer fraction 8/32
        prev = r.kv_ratio;
    }
    CHECK(prev == Catch::Approx(0.25).margin(1e-3));
}

TEST_CASE("pair ratio decreases in L and is bounded by the full fraction", "[efficiency]") {
    double prev = 1.0;
    for (std::size_t L : {std::size_t{1024}, std::size_t{8192}, std::size_t{65536},
                          std::size_t{1048576}}) {
        auto reports =
            efficiency_report(paper_baseline(), paper_hybrid(), paper_config(), {L});
        CHECK(reports[0].pair_ratio <= prev + 1e-12);
        CHECK(reports[0].pair_ratio >= 0.25);
        prev = reports[0].pair_ratio;
    }
}

TEST_CASE("flops follow the documented constant", "[efficiency]") {
    auto cfg = paper_config();
    auto r = kv_cache_size(paper_hybrid(), cfg, 1024, 2);
    for (const auto& lc : r.layers)
        CHECK(lc.flops == Catch::Approx(4.0 * static_cast<double>(lc.pairs) *
                                        cfg.head_dim() * cfg.n_query_heads));
}
