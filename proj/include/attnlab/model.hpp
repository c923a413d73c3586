#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attnlab/attention.hpp"
#include "attnlab/autodiff.hpp"
#include "attnlab/mask.hpp"
#include "attnlab/rng.hpp"
#include "attnlab/rope.hpp"

namespace attnlab {

struct ModelConfig {
    std::size_t emb_dim = 128;
    std::size_t ffn_dim = 384;
    std::size_t n_layers = 8;
    std::size_t n_query_heads = 4;
    std::size_t n_kv_heads = 2;
    std::size_t vocab_size = 512;
    std::size_t max_seq = 2048;
    // nonlinearity is fixed at swiglu

    std::size_t head_dim() const { return emb_dim / n_query_heads; }

    void validate() const {
        if (emb_dim == 0 || vocab_size == 0 || max_seq == 0)
            throw std::invalid_argument("model config: zero-sized field");
        if (n_query_heads == 0 || emb_dim % n_query_heads != 0)
            throw std::invalid_argument("model config: emb_dim not divisible by n_query_heads");
        if (n_kv_heads == 0 || n_query_heads % n_kv_heads != 0)
            throw std::invalid_argument("model config: n_query_heads not divisible by n_kv_heads");
        if (head_dim() % 2 != 0)
            throw std::invalid_argument("model config: head_dim must be even");
    }
};

enum class Positional { rope, nope };

inline std::string to_string(Positional p) { return p == Positional::rope ? "rope" : "nope"; }
inline Positional positional_from_string(const std::string& s) {
    if (s == "rope") return Positional::rope;
    if (s == "nope") return Positional::nope;
    throw std::invalid_argument("unknown positional scheme: " + s);
}

struct LayerSpec {
    std::size_t index = 0;
    Positional positional = Positional::rope;
    bool qk_norm = false;
    MaskKind mask_kind = MaskKind::causal_full;
    double theta = 0.0;      // rope layers only
    std::size_t window = 0;  // causal-swa layers only

    std::string kind_tag() const {
        if (qk_norm) return "qk-norm";
        const std::string pos = positional == Positional::nope ? "nope" : "rope";
        const std::string span = mask_kind == MaskKind::causal_swa ? "swa" : "full";
        return pos + "-" + span;
    }

    AttnMask mask(std::size_t L) const {
        return mask_kind == MaskKind::causal_swa
                   ? build_mask(L, mask_kind, window)
                   : build_mask(L, mask_kind);
    }
};

// Layers are always grouped left-to-right; for rnope-swa every group ends
// with its full-attention NoPE layer.
struct LayerPattern {
    std::vector<LayerSpec> layers;
    std::pair<std::size_t, std::size_t> ratio{1, 0};  // full : swa

    std::size_t size() const { return layers.size(); }
};

enum class Variant { rope_baseline, qk_norm, nope, rnope, rnope_swa };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::rope_baseline: return "rope-baseline";
        case Variant::qk_norm: return "qk-norm";
        case Variant::nope: return "nope";
        case Variant::rnope: return "rnope";
        case Variant::rnope_swa: return "rnope-swa";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "rope-baseline") return Variant::rope_baseline;
    if (s == "qk-norm") return Variant::qk_norm;
    if (s == "nope") return Variant::nope;
    if (s == "rnope") return Variant::rnope;
    if (s == "rnope-swa") return Variant::rnope_swa;
    throw std::invalid_argument("unknown variant: " + s);
}

// ratio meaning per variant:
//   rnope-swa  (full, swa): each group is `swa` RoPE-SWA layers followed by
//              `full` NoPE full-attention layers (full layers last).
//   rnope      (nope, rope): each group is `nope` NoPE layers then `rope`
//              RoPE layers, all full attention.
//   baselines  ratio ignored.
inline LayerPattern build_layer_pattern(std::size_t n_layers,
                                        std::pair<std::size_t, std::size_t> ratio,
                                        std::size_t window, double theta,
                                        Variant variant) {
    LayerPattern p;
    auto uniform = [&](Positional pos, bool qk) {
        for (std::size_t i = 0; i < n_layers; ++i) {
            LayerSpec s;
            s.index = i;
            s.positional = pos;
            s.qk_norm = qk;
            s.mask_kind = MaskKind::causal_full;
            s.theta = pos == Positional::rope ? theta : 0.0;
            p.layers.push_back(s);
        }
        p.ratio = {1, 0};
    };
    switch (variant) {
        case Variant::rope_baseline:
            uniform(Positional::rope, false);
            break;
        case Variant::qk_norm:
            uniform(Positional::rope, true);
            break;
        case Variant::nope:
            uniform(Positional::nope, false);
            break;
        case Variant::rnope: {
            const std::size_t group = ratio.first + ratio.second;
            if (group == 0 || n_layers % group != 0)
                throw std::invalid_argument(
                    "build_layer_pattern: n_layers not divisible by interleaving group size");
            for (std::size_t i = 0; i < n_layers; ++i) {
                LayerSpec s;
                s.index = i;
                const bool is_nope = (i % group) < ratio.first;
                s.positional = is_nope ? Positional::nope : Positional::rope;
                s.mask_kind = MaskKind::causal_full;
                s.theta = is_nope ? 0.0 : theta;
                p.layers.push_back(s);
            }
            p.ratio = ratio;
            break;
        }
        case Variant::rnope_swa: {
            const std::size_t group = ratio.first + ratio.second;
            if (group == 0 || n_layers % group != 0)
                throw std::invalid_argument(
                    "build_layer_pattern: n_layers not divisible by interleaving group size");
            if (window < 1)
                throw std::invalid_argument("build_layer_pattern: rnope-swa requires a window");
            for (std::size_t i = 0; i < n_layers; ++i) {
                LayerSpec s;
                s.index = i;
                const bool is_swa = (i % group) < ratio.second;
                if (is_swa) {
                    s.positional = Positional::rope;
                    s.mask_kind = MaskKind::causal_swa;
                    s.theta = theta;
                    s.window = window;
                } else {
                    s.positional = Positional::nope;
                    s.mask_kind = MaskKind::causal_full;
                }
                p.layers.push_back(s);
            }
            p.ratio = ratio;
            break;
        }
    }
    for (auto& s : p.layers)
        if (s.positional == Positional::rope && s.theta <= 0.0)
            throw std::invalid_argument("build_layer_pattern: rope layers need theta > 0");
    return p;
}

constexpr double kNormEps = 1e-6;

template <class T>
struct LayerWeights {
    Tensor<T> wq, wk, wv, wo;
    Tensor<T> attn_norm_g, ffn_norm_g;
    Tensor<T> w_gate, w_up, w_down;
    std::optional<QKNormParams<T>> qk;
};

template <class T>
struct ModelWeights {
    Tensor<T> embed;        // [vocab, emb]
    std::vector<LayerWeights<T>> layers;
    Tensor<T> final_norm_g;  // [emb]
    Tensor<T> unembed;       // [emb, vocab]
};

// Visits every parameter tensor in a fixed order shared by the optimizer,
// the checkpoint format, and the gradient checker.
template <class T, class F>
void for_each_param(ModelWeights<T>& w, F&& fn) {
    fn("embed", w.embed);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& lw = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        fn(p + "wq", lw.wq);
        fn(p + "wk", lw.wk);
        fn(p + "wv", lw.wv);
        fn(p + "wo", lw.wo);
        if (lw.qk) {
            fn(p + "q_gain", lw.qk->q_gain);
            fn(p + "k_gain", lw.qk->k_gain);
        }
        fn(p + "attn_norm_g", lw.attn_norm_g);
        fn(p + "w_gate", lw.w_gate);
        fn(p + "w_up", lw.w_up);
        fn(p + "w_down", lw.w_down);
        fn(p + "ffn_norm_g", lw.ffn_norm_g);
    }
    fn("final_norm_g", w.final_norm_g);
    fn("unembed", w.unembed);
}

template <class T, class F>
void for_each_param(const ModelWeights<T>& w, F&& fn) {
    for_each_param(const_cast<ModelWeights<T>&>(w),
                   [&](const std::string& n, Tensor<T>& t) {
                       fn(n, static_cast<const Tensor<T>&>(t));
                   });
}

template <class T>
ModelWeights<T> init_weights(const ModelConfig& cfg, const LayerPattern& pattern,
                             std::uint64_t seed, double init_std = 0.02) {
    cfg.validate();
    if (pattern.size() != cfg.n_layers)
        throw std::invalid_argument("init_weights: pattern depth != n_layers");
    const std::size_t E = cfg.emb_dim, F = cfg.ffn_dim, d = cfg.head_dim();
    const std::size_t qw = cfg.n_query_heads * d, kw = cfg.n_kv_heads * d;
    ModelWeights<T> w;
    w.embed = Tensor<T>({cfg.vocab_size, E});
    w.final_norm_g = Tensor<T>({E}, T(1));
    w.unembed = Tensor<T>({E, cfg.vocab_size});
    w.layers.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        auto& lw = w.layers[l];
        lw.wq = Tensor<T>({E, qw});
        lw.wk = Tensor<T>({E, kw});
        lw.wv = Tensor<T>({E, kw});
        lw.wo = Tensor<T>({qw, E});
        lw.attn_norm_g = Tensor<T>({E}, T(1));
        lw.ffn_norm_g = Tensor<T>({E}, T(1));
        lw.w_gate = Tensor<T>({E, F});
        lw.w_up = Tensor<T>({E, F});
        lw.w_down = Tensor<T>({F, E});
        if (pattern.layers[l].qk_norm) {
            QKNormParams<T> qk;
            qk.q_gain = Tensor<T>({d}, T(1));
            qk.k_gain = Tensor<T>({d}, T(1));
            qk.epsilon = T(kNormEps);
            lw.qk = std::move(qk);
        }
    }
    for_each_param(w, [&](const std::string& name, Tensor<T>& t) {
        if (t.rank() < 2) return;  // gains stay at their identity init
        Rng rng(derive_seed(seed, "init", {fnv1a(name)}));
        for (T& x : t.data) x = static_cast<T>(rng.normal(0.0, init_std));
    });
    return w;
}

template <class T>
struct ForwardOut {
    Tensor<T> logits;
    std::optional<AttentionTrace> trace;
};

// Decoder model bundled with its rope caches. Forward passes are pure given
// the weights; the caches are lazily grown read-only tables.
template <class T>
class Model {
public:
    ModelConfig cfg;
    LayerPattern pattern;
    ModelWeights<T> weights;

    Model() = default;
    Model(ModelConfig c, LayerPattern p, ModelWeights<T> w)
        : cfg(std::move(c)), pattern(std::move(p)), weights(std::move(w)) {}

    static Model random(const ModelConfig& c, const LayerPattern& p, std::uint64_t seed,
                        double init_std = 0.02) {
        return Model(c, p, init_weights<T>(c, p, seed, init_std));
    }

    // Replaces theta on every rope layer (the length-extension recipe).
    void set_rope_theta(double theta) {
        for (auto& s : pattern.layers)
            if (s.positional == Positional::rope) s.theta = theta;
        caches_.clear();
    }

    std::shared_ptr<const RopeCache<T>> rope_cache(double theta, std::size_t min_pos) {
        auto it = caches_.find(theta);
        if (it == caches_.end() || it->second->max_pos < min_pos) {
            const std::size_t cap = std::max(min_pos, cfg.max_seq);
            auto cache = std::make_shared<RopeCache<T>>(
                build_rope_cache<T>(theta, cfg.head_dim(), cap));
            caches_[theta] = cache;
            return cache;
        }
        return it->second;
    }

    ForwardOut<T> forward(const std::vector<int>& tokens, bool capture = false) {
        GradTape<T> tape;
        ParamIds ids = push_params(tape);
        ForwardOut<T> out;
        AttentionTrace trace;
        if (capture) {
            trace.init(cfg.n_layers, cfg.n_query_heads, tokens.size());
            for (std::size_t l = 0; l < cfg.n_layers; ++l)
                trace.kinds[l] = pattern.layers[l].kind_tag();
        }
        const auto logits_id =
            forward_on_tape(tape, ids, tokens, /*keep_probs=*/false,
                            capture ? &trace : nullptr);
        out.logits = tape.val(logits_id);
        if (capture) out.trace = std::move(trace);
        return out;
    }

    // Greedy continuation: repeatedly re-runs the full forward pass (no KV
    // cache runtime here) and appends the argmax token.
    std::vector<int> greedy_decode(std::vector<int> prompt, std::size_t n_tokens) {
        std::vector<int> generated;
        for (std::size_t s = 0; s < n_tokens; ++s) {
            const Tensor<T> logits = forward(prompt).logits;
            const std::size_t L = logits.extent(0), V = logits.extent(1);
            const T* row = logits.data.data() + (L - 1) * V;
            std::size_t best = 0;
            for (std::size_t j = 1; j < V; ++j)
                if (row[j] > row[best]) best = j;
            generated.push_back(static_cast<int>(best));
            prompt.push_back(static_cast<int>(best));
        }
        return generated;
    }

    // --- tape plumbing (used by the trainer and gradient checks) ---

    struct ParamIds {
        std::vector<typename GradTape<T>::Id> ids;
        std::vector<std::string> names;
    };

    ParamIds push_params(GradTape<T>& tape) {
        ParamIds out;
        for_each_param(weights, [&](const std::string& name, Tensor<T>& t) {
            out.ids.push_back(tape.leaf(t));
            out.names.push_back(name);
        });
        return out;
    }

    typename GradTape<T>::Id forward_on_tape(GradTape<T>& tape, const ParamIds& params,
                                             const std::vector<int>& tokens,
                                             bool keep_probs,
                                             AttentionTrace* trace = nullptr) {
        const std::size_t L = tokens.size();
        if (L == 0) throw std::invalid_argument("forward: empty token sequence");
        if (L > cfg.max_seq && !allow_long_)
            throw std::invalid_argument("forward: sequence longer than max_seq");
        for (int tok : tokens)
            if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab_size)
                throw std::invalid_argument("forward: token id out of vocab");

        // fixed id lookup mirroring for_each_param order
        std::size_t cursor = 0;
        auto next_id = [&]() { return params.ids[cursor++]; };

        auto positions = std::make_shared<std::vector<std::size_t>>(iota_positions(L));
        const auto embed_id = next_id();
        auto x = ad::embedding(tape, embed_id, tokens);

        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const LayerSpec& spec = pattern.layers[l];
            const auto wq = next_id(), wk = next_id(), wv = next_id(), wo = next_id();
            typename GradTape<T>::Id qg = 0, kg = 0;
            if (weights.layers[l].qk) {
                qg = next_id();
                kg = next_id();
            }
            const auto attn_g = next_id();
            const auto w_gate = next_id(), w_up = next_id(), w_down = next_id();
            const auto ffn_g = next_id();

            auto a_in = ad::rmsnorm(tape, x, attn_g, T(kNormEps));
            auto qh = ad::split_heads(tape, ad::matmul(tape, a_in, wq), cfg.n_query_heads);
            auto kh = ad::split_heads(tape, ad::matmul(tape, a_in, wk), cfg.n_kv_heads);
            auto vh = ad::split_heads(tape, ad::matmul(tape, a_in, wv), cfg.n_kv_heads);
            if (weights.layers[l].qk) {
                const T eps = weights.layers[l].qk->epsilon;
                qh = ad::layer_norm_rows(tape, qh, qg, eps);
                kh = ad::layer_norm_rows(tape, kh, kg, eps);
            }
            if (spec.positional == Positional::rope) {
                auto cache = rope_cache(spec.theta, L);
                qh = ad::rope(tape, qh, positions, cache);
                kh = ad::rope(tape, kh, positions, cache);
            }
            auto attn = ad::attend(tape, qh, kh, vh, spec.mask(L), cfg.n_query_heads,
                                   cfg.n_kv_heads, keep_probs,
                                   trace ? trace->slab(l) : nullptr);
            auto proj = ad::matmul(tape, ad::merge_heads(tape, attn), wo);
            x = ad::add(tape, x, proj);

            auto f_in = ad::rmsnorm(tape, x, ffn_g, T(kNormEps));
            auto act = ad::swiglu(tape, ad::matmul(tape, f_in, w_gate),
                                  ad::matmul(tape, f_in, w_up));
            x = ad::add(tape, x, ad::matmul(tape, act, w_down));
        }

        const auto final_g = next_id();
        const auto unembed = next_id();
        if (cfg.n_layers == 0) {
            // degenerate depth: logits = unembed(embed(tokens))
            return ad::matmul(tape, x, unembed);
        }
        auto fn = ad::rmsnorm(tape, x, final_g, T(kNormEps));
        return ad::matmul(tape, fn, unembed);
    }

    // Lengths beyond max_seq are allowed only when the caller opts in
    // (extrapolation runs); rope caches grow accordingly.
    void allow_extrapolation(bool on) { allow_long_ = on; }

private:
    std::map<double, std::shared_ptr<RopeCache<T>>> caches_;
    bool allow_long_ = false;
};

}  // namespace attnlab
