#include <catch2/catch_amalgamated.hpp>

#include "attnlab/model.hpp"
#include "attnlab/niah.hpp"

using namespace attnlab;

namespace {
const VocabLayout kVocab = VocabLayout::standard(512);

// literal retrieval program: find the [key, MAP] bigram in the context and
// copy the token after it — the harness-level end-to-end oracle
std::vector<int> oracle_decode(const std::vector<int>& prompt, std::size_t n) {
    std::vector<int> out;
    if (prompt.size() < 2) return std::vector<int>(n, 0);
    const int key = prompt[prompt.size() - 2];
    int found = 0;
    for (std::size_t i = 0; i + 2 < prompt.size() - 2; ++i)
        if (prompt[i] == key && prompt[i + 1] == kVocab.map_token) {
            found = prompt[i + 2];
            break;
        }
    for (std::size_t i = 0; i < n; ++i) out.push_back(found);
    return out;
}
}  // namespace

TEST_CASE("depth zero places the needle at the body start", "[niah]") {
    auto s = make_sample(64, 0.0, 1, kVocab);
    CHECK(s.needle_begin == 0);
    CHECK(s.needle_end == 3);
}

TEST_CASE("needle start follows the depth formula", "[niah]") {
    const std::size_t L = 1024;
    auto s = make_sample(L, 0.5, 2, kVocab);
    CHECK(s.needle_begin ==
          static_cast<std::size_t>(std::llround(0.5 * (L - kNeedleLen - kQueryLen))));
    auto deep = make_sample(L, 1.0, 2, kVocab);
    CHECK(deep.needle_end == deep.query_begin);  // adjacent but disjoint
}

TEST_CASE("same cell parameters give identical samples", "[niah]") {
    auto a = make_sample(256, 0.25, 77, kVocab);
    auto b = make_sample(256, 0.25, 77, kVocab);
    CHECK(a.tokens == b.tokens);
    CHECK(a.needle_begin == b.needle_begin);
    CHECK(a.answer == b.answer);
}

TEST_CASE("sample structure matches the key-value template", "[niah]") {
    auto s = make_sample(128, 0.5, 3, kVocab);
    REQUIRE(s.tokens.size() == 128);
    const int key = s.tokens[s.needle_begin];
    CHECK(key >= kVocab.key_lo);
    CHECK(key < kVocab.key_hi);
    CHECK(s.tokens[s.needle_begin + 1] == kVocab.map_token);
    const int value = s.tokens[s.needle_begin + 2];
    CHECK(value >= kVocab.value_lo);
    CHECK(value < kVocab.value_hi);
    CHECK(s.tokens[s.query_begin] == kVocab.query_token);
    CHECK(s.tokens[s.query_begin + 1] == key);
    CHECK(s.tokens[s.query_begin + 2] == kVocab.map_token);
    CHECK(s.tokens[s.answer_begin] == value);
    CHECK(s.answer == std::vector<int>{value});
}

TEST_CASE("answer tokens appear exactly once in the context", "[niah]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto s = make_sample(200, 0.4, seed, kVocab);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < s.answer_begin; ++i)
            if (s.tokens[i] == s.answer[0]) ++hits;
        CHECK(hits == 1);
    }
}

TEST_CASE("too-short sequences are rejected", "[niah]") {
    CHECK_THROWS(make_sample(5, 0.5, 1, kVocab));
    CHECK_THROWS(make_sample(64, 1.5, 1, kVocab));
}

TEST_CASE("oracle copy model scores a perfect 10", "[niah]") {
    GridSpec spec;
    spec.lengths = {64, 128, 256};
    spec.depths = {0.0, 0.25, 0.5, 0.75, 1.0};
    spec.seeds_per_cell = 16;
    auto res = score_grid(oracle_decode, spec, kVocab, 9, 2);
    CHECK(res.cells.size() == 3 * 5 * 16);
    CHECK(res.score() == 10.0);
    for (auto& [len, v] : res.per_length()) CHECK(v == 10.0);
}

TEST_CASE("a decoder that always fails scores zero, half right scores five", "[niah]") {
    GridSpec spec;
    spec.lengths = {64};
    spec.depths = {0.0, 0.5};
    spec.seeds_per_cell = 8;
    auto wrong = [](const std::vector<int>&, std::size_t n) {
        return std::vector<int>(n, 0);
    };
    CHECK(score_grid(wrong, spec, kVocab, 1).score() == 0.0);
    // pass exactly the depth-0 cells: flip a coin keyed by the needle position
    auto half = [&](const std::vector<int>& prompt, std::size_t n) {
        // depth 0 puts the key at index 0
        const int key = prompt[prompt.size() - 2];
        if (prompt[0] == key) return oracle_decode(prompt, n);
        return std::vector<int>(n, 0);
    };
    CHECK(score_grid(half, spec, kVocab, 1).score() == 5.0);
}

TEST_CASE("an untrained random model scores near zero", "[niah]") {
    ModelConfig cfg;
    cfg.emb_dim = 32;
    cfg.ffn_dim = 64;
    cfg.n_layers = 2;
    cfg.n_query_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.vocab_size = 512;
    cfg.max_seq = 64;
    auto m = Model<double>::random(
        cfg, build_layer_pattern(2, {1, 1}, 8, 10000.0, Variant::rnope_swa), 33);
    GridSpec spec;
    spec.lengths = {48};
    spec.depths = {0.5};
    spec.seeds_per_cell = 8;
    auto decode = [&](const std::vector<int>& prompt, std::size_t n) {
        return m.greedy_decode(prompt, n);
    };
    CHECK(score_grid(decode, spec, kVocab, 2).score() <= 2.5);
}

TEST_CASE("grid evaluation is independent of thread count", "[niah]") {
    GridSpec spec;
    spec.lengths = {64, 96};
    spec.depths = {0.0, 1.0};
    spec.seeds_per_cell = 4;
    auto res1 = score_grid(oracle_decode, spec, kVocab, 3, 1);
    auto res4 = score_grid(oracle_decode, spec, kVocab, 3, 4);
    REQUIRE(res1.cells.size() == res4.cells.size());
    for (std::size_t i = 0; i < res1.cells.size(); ++i)
        CHECK(res1.cells[i].pass == res4.cells[i].pass);
}

TEST_CASE("heatmap has depth-by-length shape", "[niah]") {
    GridSpec spec;
    spec.lengths = {64, 128};
    spec.depths = {0.0, 0.5, 1.0};
    spec.seeds_per_cell = 2;
    auto res = score_grid(oracle_decode, spec, kVocab, 4);
    auto h = res.heatmap();
    REQUIRE(h.size() == 3);
    REQUIRE(h[0].size() == 2);
    for (const auto& row : h)
        for (double v : row) CHECK(v == 10.0);
}
