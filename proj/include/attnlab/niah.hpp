#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "attnlab/rng.hpp"

namespace attnlab {

// Token-id ranges for the synthetic key-value retrieval task. Filler tokens
// are disjoint from key/value/marker tokens so the answer appears exactly
// once in the context and scoring is unambiguous.
struct VocabLayout {
    std::size_t vocab_size = 0;
    int map_token = 1;    // "maps to"
    int query_token = 2;  // query marker
    int key_lo = 0, key_hi = 0;        // [key_lo, key_hi)
    int value_lo = 0, value_hi = 0;    // [value_lo, value_hi)
    int filler_lo = 0, filler_hi = 0;  // [filler_lo, filler_hi)

    static VocabLayout standard(std::size_t vocab) {
        if (vocab < 16)
            throw std::invalid_argument("vocab layout: vocab_size must be >= 16");
        VocabLayout v;
        v.vocab_size = vocab;
        const int usable = static_cast<int>(vocab) - 4;
        const int quarter = usable / 4;
        v.key_lo = 4;
        v.key_hi = v.key_lo + quarter;
        v.value_lo = v.key_hi;
        v.value_hi = v.value_lo + quarter;
        v.filler_lo = v.value_hi;
        v.filler_hi = static_cast<int>(vocab);
        return v;
    }
};

// One haystack: random filler, a three-token needle [key, MAP, value] at a
// depth-controlled offset, and the query [QUERY, key, MAP] plus the answer
// token at the very end.
struct NIAHSample {
    std::vector<int> tokens;     // full sequence, answer included at the back
    std::size_t needle_begin = 0;
    std::size_t needle_end = 0;  // exclusive
    std::size_t query_begin = 0; // query span = [query_begin, tokens.size())
    std::size_t answer_begin = 0;
    std::vector<int> answer;
    std::uint64_t seed = 0;
    double depth = 0.0;
};

inline constexpr std::size_t kNeedleLen = 3;  // key, MAP, value
inline constexpr std::size_t kQueryLen = 4;   // QUERY, key, MAP, answer

inline NIAHSample make_sample(std::size_t L, double depth, std::uint64_t seed,
                              const VocabLayout& vocab) {
    if (L < kNeedleLen + kQueryLen)
        throw std::invalid_argument("make_sample: sequence too short for needle and query");
    if (depth < 0.0 || depth > 1.0)
        throw std::invalid_argument("make_sample: depth must be in [0, 1]");
    Rng rng(seed);
    NIAHSample s;
    s.seed = seed;
    s.depth = depth;
    const int key = static_cast<int>(rng.uniform_int(vocab.key_lo, vocab.key_hi));
    const int value = static_cast<int>(rng.uniform_int(vocab.value_lo, vocab.value_hi));

    const std::size_t body_len = L - kQueryLen;
    s.needle_begin = static_cast<std::size_t>(
        std::llround(depth * static_cast<double>(L - kNeedleLen - kQueryLen)));
    s.needle_end = s.needle_begin + kNeedleLen;
    s.query_begin = body_len;
    s.answer_begin = L - 1;
    s.answer = {value};

    s.tokens.resize(L);
    for (std::size_t i = 0; i < body_len; ++i)
        s.tokens[i] = static_cast<int>(rng.uniform_int(vocab.filler_lo, vocab.filler_hi));
    s.tokens[s.needle_begin] = key;
    s.tokens[s.needle_begin + 1] = vocab.map_token;
    s.tokens[s.needle_begin + 2] = value;
    s.tokens[body_len] = vocab.query_token;
    s.tokens[body_len + 1] = key;
    s.tokens[body_len + 2] = vocab.map_token;
    s.tokens[body_len + 3] = value;
    return s;
}

struct GridSpec {
    std::vector<std::size_t> lengths{256, 512, 1024, 2048};
    std::vector<double> depths{0.0, 0.25, 0.5, 0.75, 1.0};
    std::size_t seeds_per_cell = 16;
};

struct CellResult {
    std::size_t length = 0;
    double depth = 0.0;
    std::size_t seed_index = 0;
    bool pass = false;
};

struct GridResults {
    GridSpec spec;
    std::vector<CellResult> cells;

    // 10 x mean pass rate over all cells
    double score() const {
        if (cells.empty()) return 0.0;
        double hits = 0.0;
        for (const auto& c : cells) hits += c.pass ? 1.0 : 0.0;
        return 10.0 * hits / static_cast<double>(cells.size());
    }

    std::map<std::size_t, double> per_length() const {
        std::map<std::size_t, double> sum, n;
        for (const auto& c : cells) {
            sum[c.length] += c.pass ? 1.0 : 0.0;
            n[c.length] += 1.0;
        }
        std::map<std::size_t, double> out;
        for (auto& [k, v] : sum) out[k] = 10.0 * v / n[k];
        return out;
    }

    std::map<double, double> per_depth() const {
        std::map<double, double> sum, n;
        for (const auto& c : cells) {
            sum[c.depth] += c.pass ? 1.0 : 0.0;
            n[c.depth] += 1.0;
        }
        std::map<double, double> out;
        for (auto& [k, v] : sum) out[k] = 10.0 * v / n[k];
        return out;
    }

    // heatmap[d][l] = score of cell group (depth d, length l)
    std::vector<std::vector<double>> heatmap() const {
        std::vector<std::vector<double>> h(spec.depths.size(),
                                           std::vector<double>(spec.lengths.size(), 0.0));
        std::vector<std::vector<double>> n = h;
        for (const auto& c : cells) {
            for (std::size_t di = 0; di < spec.depths.size(); ++di)
                for (std::size_t li = 0; li < spec.lengths.size(); ++li)
                    if (spec.depths[di] == c.depth && spec.lengths[li] == c.length) {
                        h[di][li] += c.pass ? 1.0 : 0.0;
                        n[di][li] += 1.0;
                    }
        }
        for (std::size_t di = 0; di < spec.depths.size(); ++di)
            for (std::size_t li = 0; li < spec.lengths.size(); ++li)
                if (n[di][li] > 0) h[di][li] = 10.0 * h[di][li] / n[di][li];
        return h;
    }
};

// prompt -> n greedily decoded tokens
using DecodeFn = std::function<std::vector<int>(const std::vector<int>&, std::size_t)>;

// depth keys hashed through a fixed decimal rendering so cell seeds do not
// depend on floating-point bit patterns
inline std::string depth_key(double depth) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", depth);
    return buf;
}

// A cell passes iff the greedy continuation equals the answer tokens.
// Cells are independent; evaluation order never changes the results.
inline GridResults score_grid(const DecodeFn& decode, const GridSpec& spec,
                              const VocabLayout& vocab, std::uint64_t seed,
                              std::size_t n_threads = 1) {
    GridResults out;
    out.spec = spec;
    for (std::size_t li = 0; li < spec.lengths.size(); ++li)
        for (std::size_t di = 0; di < spec.depths.size(); ++di)
            for (std::size_t si = 0; si < spec.seeds_per_cell; ++si)
                out.cells.push_back(
                    CellResult{spec.lengths[li], spec.depths[di], si, false});

    auto eval_cell = [&](CellResult& c) {
        const std::uint64_t cell_seed =
            derive_seed(seed, "niah", {c.length, fnv1a(depth_key(c.depth)), c.seed_index});
        const NIAHSample s = make_sample(c.length, c.depth, cell_seed, vocab);
        const std::vector<int> prompt(s.tokens.begin(),
                                      s.tokens.begin() + static_cast<long>(s.answer_begin));
        c.pass = decode(prompt, s.answer.size()) == s.answer;
    };

    const std::size_t workers =
        std::min<std::size_t>(std::max<std::size_t>(n_threads, 1), out.cells.size());
    if (workers <= 1) {
        for (auto& c : out.cells) eval_cell(c);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < out.cells.size(); i += workers)
                    eval_cell(out.cells[i]);
            });
        for (auto& th : pool) th.join();
    }
    return out;
}

}  // namespace attnlab
