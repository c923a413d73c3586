#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnlab/analysis.hpp"
#include "attnlab/io_util.hpp"
#include "attnlab/model.hpp"
#include "attnlab/niah.hpp"
#include "attnlab/trainer.hpp"

namespace attnlab {

// Configuration problems carry the offending field path.
struct ConfigError : std::runtime_error {
    std::string field;
    ConfigError(std::string f, const std::string& msg)
        : std::runtime_error(f + ": " + msg), field(std::move(f)) {}
};

struct PatternParams {
    std::pair<std::size_t, std::size_t> ratio{1, 3};
    std::size_t window = 0;
    double theta = 10000.0;
};

struct TrainPhase {
    std::string name;
    TrainConfig cfg;
    std::optional<double> theta;  // rope theta override entering this phase
};

struct NiahParams {
    std::vector<std::size_t> lengths{256, 512, 1024, 2048};
    std::vector<double> depths{0.0, 0.25, 0.5, 0.75, 1.0};
    std::size_t seeds_per_cell = 16;
    bool allow_extrapolation = false;
    std::string checkpoint;  // empty -> <out_dir>/model.ckpt
};

struct AnalysisParams {
    std::vector<std::size_t> lengths{512};
    double depth = 0.5;
    std::size_t samples = 4;
    bool save_traces = false;
    std::string checkpoint;
    std::vector<std::string> traces;  // analyze existing trace files instead
};

struct CostParams {
    std::vector<std::size_t> lengths{65536, 131072};
    std::size_t bytes_per_elem = 2;
};

struct CompareRun {
    std::string name;
    std::string dir;
};

struct ExperimentConfig {
    std::string variant = "rnope-swa";
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::string precision = "f64";  // f32 | f64
    std::size_t threads = 2;
    ModelConfig model;
    PatternParams pattern;
    std::vector<TrainPhase> phases;
    AdamWConfig optimizer;
    NiahParams niah;
    AnalysisParams analysis;
    CostParams cost;
    std::vector<CompareRun> compare;
    std::string config_hash;

    LayerPattern build_pattern() const {
        return build_layer_pattern(model.n_layers, pattern.ratio, pattern.window,
                                   pattern.theta, variant_from_string(variant));
    }

    std::filesystem::path checkpoint_path(const std::string& override_path) const {
        if (!override_path.empty()) return override_path;
        return std::filesystem::path(out_dir) / "model.ckpt";
    }
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const std::string& key,
                                     const std::string& path) {
    if (!j.contains(key)) throw ConfigError(path + key, "missing required field");
    return j.at(key);
}

template <class T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback,
         const std::string& path) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path + key, "wrong type");
    }
}

template <class T>
T get_req(const nlohmann::json& j, const std::string& key, const std::string& path) {
    const auto& v = require(j, key, path);
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(path + key, "wrong type");
    }
}

inline std::pair<std::size_t, std::size_t> get_ratio(const nlohmann::json& j,
                                                     const std::string& key,
                                                     std::pair<std::size_t, std::size_t> fb,
                                                     const std::string& path) {
    if (!j.contains(key)) return fb;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2)
        throw ConfigError(path + key, "expected a [a, b] pair");
    return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j,
                                     const std::string& raw_bytes) {
    using namespace detail;
    ExperimentConfig c;
    c.config_hash = config_hash_of(raw_bytes);
    c.variant = get_or<std::string>(j, "variant", c.variant, "");
    try {
        variant_from_string(c.variant);
    } catch (const std::exception& e) {
        throw ConfigError("variant", e.what());
    }
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "");
    c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir, "");
    c.precision = get_or<std::string>(j, "precision", c.precision, "");
    if (c.precision != "f32" && c.precision != "f64")
        throw ConfigError("precision", "must be \"f32\" or \"f64\"");
    c.threads = get_or<std::size_t>(j, "threads", c.threads, "");

    if (j.contains("model")) {
        const auto& m = j.at("model");
        const std::string p = "model.";
        c.model.emb_dim = get_or<std::size_t>(m, "emb_dim", c.model.emb_dim, p);
        c.model.ffn_dim = get_or<std::size_t>(m, "ffn_dim", c.model.ffn_dim, p);
        c.model.n_layers = get_or<std::size_t>(m, "n_layers", c.model.n_layers, p);
        c.model.n_query_heads =
            get_or<std::size_t>(m, "n_query_heads", c.model.n_query_heads, p);
        c.model.n_kv_heads = get_or<std::size_t>(m, "n_kv_heads", c.model.n_kv_heads, p);
        c.model.vocab_size = get_or<std::size_t>(m, "vocab_size", c.model.vocab_size, p);
        c.model.max_seq = get_or<std::size_t>(m, "max_seq", c.model.max_seq, p);
        try {
            c.model.validate();
        } catch (const std::exception& e) {
            throw ConfigError("model", e.what());
        }
    }

    if (j.contains("pattern")) {
        const auto& m = j.at("pattern");
        const std::string p = "pattern.";
        c.pattern.ratio = get_ratio(m, "ratio", c.pattern.ratio, p);
        c.pattern.window = get_or<std::size_t>(m, "window", c.pattern.window, p);
        c.pattern.theta = get_or<double>(m, "theta", c.pattern.theta, p);
    }
    try {
        (void)c.build_pattern();
    } catch (const std::exception& e) {
        throw ConfigError("pattern", e.what());
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        if (t.contains("optimizer")) {
            const auto& o = t.at("optimizer");
            const std::string p = "train.optimizer.";
            c.optimizer.beta1 = get_or<double>(o, "beta1", c.optimizer.beta1, p);
            c.optimizer.beta2 = get_or<double>(o, "beta2", c.optimizer.beta2, p);
            c.optimizer.weight_decay =
                get_or<double>(o, "weight_decay", c.optimizer.weight_decay, p);
            c.optimizer.eps = get_or<double>(o, "eps", c.optimizer.eps, p);
        }
        const auto& phases = require(t, "phases", "train.");
        if (!phases.is_array() || phases.empty())
            throw ConfigError("train.phases", "expected a non-empty array");
        std::size_t idx = 0;
        for (const auto& ph : phases) {
            const std::string p = "train.phases[" + std::to_string(idx) + "].";
            TrainPhase phase;
            phase.name = get_or<std::string>(ph, "name", "phase" + std::to_string(idx), p);
            phase.cfg.total_steps = get_req<std::size_t>(ph, "steps", p);
            phase.cfg.peak_lr = get_req<double>(ph, "peak_lr", p);
            phase.cfg.end_lr = get_or<double>(ph, "end_lr", phase.cfg.peak_lr / 10.0, p);
            phase.cfg.warmup_steps = get_or<std::size_t>(ph, "warmup_steps", 0, p);
            phase.cfg.batch_tokens = get_req<std::size_t>(ph, "batch_tokens", p);
            phase.cfg.short_len = get_req<std::size_t>(ph, "short_len", p);
            phase.cfg.long_len = get_or<std::size_t>(ph, "long_len", phase.cfg.short_len, p);
            phase.cfg.interleave_ratio =
                detail::get_ratio(ph, "interleave_ratio", {1, 0}, p);
            phase.cfg.optimizer = c.optimizer;
            phase.cfg.seed = derive_seed(c.seed, "phase", {idx});
            if (ph.contains("theta")) phase.theta = ph.at("theta").get<double>();
            try {
                phase.cfg.validate();
            } catch (const std::exception& e) {
                throw ConfigError(p.substr(0, p.size() - 1), e.what());
            }
            if (phase.cfg.short_len > c.model.max_seq ||
                phase.cfg.long_len > c.model.max_seq)
                throw ConfigError(p + "short_len", "training length exceeds model max_seq");
            c.phases.push_back(std::move(phase));
            ++idx;
        }
    }

    if (j.contains("niah")) {
        const auto& n = j.at("niah");
        const std::string p = "niah.";
        c.niah.lengths =
            get_or<std::vector<std::size_t>>(n, "lengths", c.niah.lengths, p);
        c.niah.depths = get_or<std::vector<double>>(n, "depths", c.niah.depths, p);
        c.niah.seeds_per_cell =
            get_or<std::size_t>(n, "seeds_per_cell", c.niah.seeds_per_cell, p);
        c.niah.allow_extrapolation =
            get_or<bool>(n, "allow_extrapolation", c.niah.allow_extrapolation, p);
        c.niah.checkpoint = get_or<std::string>(n, "checkpoint", "", p);
    }
    for (std::size_t L : c.niah.lengths)
        if (L > c.model.max_seq && !c.niah.allow_extrapolation)
            throw ConfigError("niah.lengths",
                              "length exceeds model max_seq and allow_extrapolation is off");

    if (j.contains("analysis")) {
        const auto& a = j.at("analysis");
        const std::string p = "analysis.";
        c.analysis.lengths =
            get_or<std::vector<std::size_t>>(a, "lengths", c.analysis.lengths, p);
        c.analysis.depth = get_or<double>(a, "depth", c.analysis.depth, p);
        c.analysis.samples = get_or<std::size_t>(a, "samples", c.analysis.samples, p);
        c.analysis.save_traces =
            get_or<bool>(a, "save_traces", c.analysis.save_traces, p);
        c.analysis.checkpoint = get_or<std::string>(a, "checkpoint", "", p);
        c.analysis.traces =
            get_or<std::vector<std::string>>(a, "traces", c.analysis.traces, p);
        if (c.analysis.depth < 0.0 || c.analysis.depth > 1.0)
            throw ConfigError("analysis.depth", "must be in [0, 1]");
    }

    if (j.contains("cost")) {
        const auto& k = j.at("cost");
        const std::string p = "cost.";
        c.cost.lengths = get_or<std::vector<std::size_t>>(k, "lengths", c.cost.lengths, p);
        c.cost.bytes_per_elem =
            get_or<std::size_t>(k, "bytes_per_elem", c.cost.bytes_per_elem, p);
        if (c.cost.bytes_per_elem == 0)
            throw ConfigError("cost.bytes_per_elem", "must be positive");
    }

    if (j.contains("compare")) {
        const auto& runs = require(j.at("compare"), "runs", "compare.");
        if (!runs.is_array() || runs.size() < 2)
            throw ConfigError("compare.runs", "expected at least two runs");
        std::size_t idx = 0;
        for (const auto& r : runs) {
            const std::string p = "compare.runs[" + std::to_string(idx) + "].";
            CompareRun run;
            run.name = get_req<std::string>(r, "name", p);
            run.dir = get_req<std::string>(r, "dir", p);
            c.compare.push_back(std::move(run));
            ++idx;
        }
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string raw;
    try {
        raw = read_file(path);
    } catch (const std::exception& e) {
        throw ConfigError("config", e.what());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j, raw);
}

}  // namespace attnlab
