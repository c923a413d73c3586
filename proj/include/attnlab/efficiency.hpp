#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnlab/model.hpp"

namespace attnlab {

// Closed-form count of allowed (query, key) pairs under a layer's mask.
// causal-full: L(L+1)/2. causal-swa with L >= S: S(S+1)/2 + (L-S)S;
// below S the window is inactive and the count degenerates to causal-full.
inline std::uint64_t pair_count(std::size_t L, const LayerSpec& spec) {
    const std::uint64_t l = L;
    if (spec.mask_kind == MaskKind::causal_full || L <= spec.window)
        return l * (l + 1) / 2;
    const std::uint64_t s = spec.window;
    return s * (s + 1) / 2 + (l - s) * s;
}

// attn_flops = 4 * pairs * head_dim * n_query_heads: one multiply+add for
// QK^T and one for weight*V per pair per head dimension. The constant is
// fixed so that ratios between layouts are constant-free.
inline double attn_flops(std::uint64_t pairs, const ModelConfig& cfg) {
    return 4.0 * static_cast<double>(pairs) * static_cast<double>(cfg.head_dim()) *
           static_cast<double>(cfg.n_query_heads);
}

// K and V cached per layer: 2 * n_kv_heads * head_dim * bytes * cached positions
inline std::uint64_t layer_kv_bytes(std::size_t L, const LayerSpec& spec,
                                    const ModelConfig& cfg, std::size_t bytes_per_elem) {
    const std::uint64_t cached =
        spec.mask_kind == MaskKind::causal_swa ? std::min<std::uint64_t>(L, spec.window) : L;
    return 2ull * cfg.n_kv_heads * cfg.head_dim() * bytes_per_elem * cached;
}

struct LayerCost {
    std::size_t layer = 0;
    std::string kind;
    std::uint64_t pairs = 0;
    double flops = 0.0;
    std::uint64_t kv_bytes = 0;
};

struct CostReport {
    std::size_t context_length = 0;
    std::vector<LayerCost> layers;
    std::uint64_t total_pairs = 0;
    double total_flops = 0.0;
    std::uint64_t total_kv_bytes = 0;
    // versus an all-full-attention stack of the same depth
    std::uint64_t baseline_pairs = 0;
    std::uint64_t baseline_kv_bytes = 0;
    double pair_ratio = 1.0;
    double kv_ratio = 1.0;
    double kv_reduction_pct = 0.0;
    std::string note =
        "analytical model only; end-to-end wall-clock is out of scope";
};

inline CostReport kv_cache_size(const LayerPattern& pattern, const ModelConfig& cfg,
                                std::size_t L, std::size_t bytes_per_elem = 2) {
    if (L < 1) throw std::invalid_argument("kv_cache_size: L must be >= 1");
    CostReport r;
    r.context_length = L;
    LayerSpec full;
    full.mask_kind = MaskKind::causal_full;
    for (const auto& spec : pattern.layers) {
        LayerCost c;
        c.layer = spec.index;
        c.kind = spec.kind_tag();
        c.pairs = pair_count(L, spec);
        c.flops = attn_flops(c.pairs, cfg);
        c.kv_bytes = layer_kv_bytes(L, spec, cfg, bytes_per_elem);
        r.total_pairs += c.pairs;
        r.total_flops += c.flops;
        r.total_kv_bytes += c.kv_bytes;
        r.layers.push_back(std::move(c));
        r.baseline_pairs += pair_count(L, full);
        r.baseline_kv_bytes += layer_kv_bytes(L, full, cfg, bytes_per_elem);
    }
    r.pair_ratio = static_cast<double>(r.total_pairs) / static_cast<double>(r.baseline_pairs);
    r.kv_ratio =
        static_cast<double>(r.total_kv_bytes) / static_cast<double>(r.baseline_kv_bytes);
    r.kv_reduction_pct = 100.0 * (1.0 - r.kv_ratio);
    return r;
}

// Hybrid-vs-baseline ratios per context length. Flops and pair ratios track
// attention work only.
inline std::vector<CostReport> efficiency_report(const LayerPattern& baseline,
                                                 const LayerPattern& hybrid,
                                                 const ModelConfig& cfg,
                                                 const std::vector<std::size_t>& lengths,
                                                 std::size_t bytes_per_elem = 2) {
    if (baseline.size() != hybrid.size())
        throw std::invalid_argument("efficiency_report: patterns differ in depth");
    std::vector<CostReport> out;
    for (std::size_t L : lengths) {
        CostReport h = kv_cache_size(hybrid, cfg, L, bytes_per_elem);
        const CostReport b = kv_cache_size(baseline, cfg, L, bytes_per_elem);
        h.baseline_pairs = b.total_pairs;
        h.baseline_kv_bytes = b.total_kv_bytes;
        h.pair_ratio =
            static_cast<double>(h.total_pairs) / static_cast<double>(b.total_pairs);
        h.kv_ratio =
            static_cast<double>(h.total_kv_bytes) / static_cast<double>(b.total_kv_bytes);
        h.kv_reduction_pct = 100.0 * (1.0 - h.kv_ratio);
        out.push_back(std::move(h));
    }
    return out;
}

}  // namespace attnlab
