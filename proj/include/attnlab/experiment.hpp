#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnlab/analysis.hpp"
#include "attnlab/checkpoint.hpp"
#include "attnlab/config.hpp"
#include "attnlab/efficiency.hpp"
#include "attnlab/io_util.hpp"
#include "attnlab/niah.hpp"
#include "attnlab/trace_io.hpp"
#include "attnlab/trainer.hpp"

namespace attnlab {

namespace fs = std::filesystem;

inline nlohmann::ordered_json artifact_meta(const std::string& subcommand,
                                            const ExperimentConfig& cfg) {
    return {{"version", ATTNLAB_VERSION},
            {"subcommand", subcommand},
            {"config_hash", cfg.config_hash}};
}

// --- train ---------------------------------------------------------------

// Curriculum sample: a fresh key-value retrieval haystack with a random
// depth, fully determined by (seed, phase, step, index).
inline std::vector<int> curriculum_sequence(const ExperimentConfig& cfg,
                                            const VocabLayout& vocab,
                                            std::size_t phase_idx, std::size_t step,
                                            std::size_t idx, std::size_t len) {
    Rng r(derive_seed(cfg.seed, "train-sample", {phase_idx, step, idx}));
    const double depth = r.uniform();
    return make_sample(len, depth, r.next_u64(), vocab).tokens;
}

template <class T>
Model<T> run_train_impl(const ExperimentConfig& cfg, std::ostream& log) {
    const LayerPattern pattern = cfg.build_pattern();
    Model<T> model =
        Model<T>::random(cfg.model, pattern, derive_seed(cfg.seed, "weights"));
    const VocabLayout vocab = VocabLayout::standard(cfg.model.vocab_size);
    if (cfg.phases.empty())
        throw std::runtime_error("train: config has no train.phases");

    std::vector<MetricsRow> metrics;
    std::size_t step_offset = 0, tokens_offset = 0;
    for (std::size_t pi = 0; pi < cfg.phases.size(); ++pi) {
        const TrainPhase& phase = cfg.phases[pi];
        if (phase.theta) model.set_rope_theta(*phase.theta);
        auto data = [&, pi](std::size_t step, std::size_t idx, std::size_t len) {
            return curriculum_sequence(cfg, vocab, pi, step, idx, len);
        };
        auto result =
            train(model, data, phase.cfg, cfg.threads, step_offset, tokens_offset);
        step_offset += phase.cfg.total_steps;
        tokens_offset = result.metrics.back().tokens_seen;
        log << "phase " << phase.name << ": " << phase.cfg.total_steps
            << " steps, final loss " << result.metrics.back().loss << "\n";
        metrics.insert(metrics.end(), result.metrics.begin(), result.metrics.end());
    }

    CsvWriter csv("train", cfg.config_hash);
    csv.header({"step", "lr", "loss", "tokens_seen"});
    for (const auto& m : metrics)
        csv.row({std::to_string(m.step), format_double(m.lr), format_double(m.loss),
                 std::to_string(m.tokens_seen)});
    atomic_write(fs::path(cfg.out_dir) / "metrics.csv", csv.str());
    save_checkpoint(fs::path(cfg.out_dir) / "model.ckpt", model);
    return model;
}

inline void run_train(const ExperimentConfig& cfg, std::ostream& log) {
    if (cfg.precision == "f32")
        run_train_impl<float>(cfg, log);
    else
        run_train_impl<double>(cfg, log);
}

// --- niah ----------------------------------------------------------------

template <class T>
GridResults run_niah_impl(const ExperimentConfig& cfg, std::ostream& log) {
    const fs::path ckpt = cfg.checkpoint_path(cfg.niah.checkpoint);
    if (!fs::exists(ckpt))
        throw std::runtime_error("niah: checkpoint not found: " + ckpt.string());
    Model<T> model = load_checkpoint<T>(ckpt);

    GridSpec spec;
    spec.lengths = cfg.niah.lengths;
    spec.depths = cfg.niah.depths;
    spec.seeds_per_cell = cfg.niah.seeds_per_cell;
    std::size_t max_len = 0;
    for (std::size_t L : spec.lengths) {
        if (L > model.cfg.max_seq && !cfg.niah.allow_extrapolation)
            throw std::runtime_error("niah: length exceeds checkpoint max_seq");
        max_len = std::max(max_len, L);
    }
    model.allow_extrapolation(true);
    // caches must be warm before worker threads share the model
    for (const auto& s : model.pattern.layers)
        if (s.positional == Positional::rope) model.rope_cache(s.theta, max_len + 8);

    const VocabLayout vocab = VocabLayout::standard(model.cfg.vocab_size);
    auto decode = [&model](const std::vector<int>& prompt, std::size_t n) {
        return model.greedy_decode(prompt, n);
    };
    GridResults res = score_grid(decode, spec, vocab, cfg.seed, cfg.threads);
    log << "niah score " << format_double(res.score()) << " over " << res.cells.size()
        << " cells\n";

    CsvWriter grid("niah", cfg.config_hash);
    grid.header({"length", "depth", "seed", "pass"});
    for (const auto& c : res.cells)
        grid.row({std::to_string(c.length), format_double(c.depth),
                  std::to_string(c.seed_index), c.pass ? "1" : "0"});
    atomic_write(fs::path(cfg.out_dir) / "grid.csv", grid.str());

    nlohmann::ordered_json summary;
    summary["_meta"] = artifact_meta("niah", cfg);
    summary["variant"] = cfg.variant;
    summary["score"] = res.score();
    nlohmann::ordered_json per_length = nlohmann::ordered_json::object();
    for (const auto& [k, v] : res.per_length()) per_length[std::to_string(k)] = v;
    summary["per_length"] = per_length;
    nlohmann::ordered_json per_depth = nlohmann::ordered_json::object();
    for (const auto& [k, v] : res.per_depth()) per_depth[format_double(k)] = v;
    summary["per_depth"] = per_depth;
    summary["seeds_per_cell"] = spec.seeds_per_cell;
    // the synthetic template and scoring rule travel with every score
    summary["needle_template"] = "key MAP value";
    summary["query_template"] = "QUERY key MAP";
    summary["scoring_rule"] =
        "greedy continuation of answer length must equal the answer tokens; "
        "score = 10 x mean pass rate";
    atomic_write(fs::path(cfg.out_dir) / "summary.json", summary.dump(2) + "\n");

    CsvWriter heat("niah", cfg.config_hash);
    std::vector<std::string> cols{"depth"};
    for (std::size_t L : spec.lengths) cols.push_back("len_" + std::to_string(L));
    heat.header(cols);
    const auto hm = res.heatmap();
    for (std::size_t di = 0; di < spec.depths.size(); ++di) {
        std::vector<std::string> row{format_double(spec.depths[di])};
        for (std::size_t li = 0; li < spec.lengths.size(); ++li)
            row.push_back(format_double(hm[di][li]));
        heat.row(row);
    }
    atomic_write(fs::path(cfg.out_dir) / "heatmap.csv", heat.str());
    return res;
}

inline GridResults run_niah(const ExperimentConfig& cfg, std::ostream& log) {
    if (cfg.precision == "f32") return run_niah_impl<float>(cfg, log);
    return run_niah_impl<double>(cfg, log);
}

// --- analyze ---------------------------------------------------------------

struct AnalyzeOutput {
    // per context length
    std::map<std::size_t, MassReport> mass;
    std::map<std::size_t, EntropyStats> entropy_raw;
    std::map<std::size_t, EntropyStats> entropy_pre;
};

template <class T>
std::vector<AttentionTrace> capture_analysis_traces(const ExperimentConfig& cfg,
                                                    Model<T>& model) {
    const VocabLayout vocab = VocabLayout::standard(model.cfg.vocab_size);
    std::vector<AttentionTrace> traces;
    for (std::size_t L : cfg.analysis.lengths) {
        if (L > model.cfg.max_seq)
            throw std::runtime_error("analyze: length exceeds checkpoint max_seq");
        for (std::size_t s = 0; s < cfg.analysis.samples; ++s) {
            const auto sample = make_sample(
                L, cfg.analysis.depth, derive_seed(cfg.seed, "analysis", {L, s}), vocab);
            auto out = model.forward(sample.tokens, /*capture=*/true);
            out.trace->spans =
                TraceSpans{sample.needle_begin, sample.needle_end, sample.query_begin};
            traces.push_back(std::move(*out.trace));
        }
    }
    return traces;
}

inline AnalyzeOutput analyze_traces(const std::vector<AttentionTrace>& traces) {
    AnalyzeOutput out;
    std::map<std::size_t, std::vector<LayerHeadMass>> entries;
    for (const auto& t : traces) {
        const SegmentSpans spans = SegmentSpans::from_trace(t);
        auto masses = attention_mass(t, spans);
        auto& bucket = entries[t.seq_len];
        bucket.insert(bucket.end(), masses.begin(), masses.end());
        out.entropy_raw[t.seq_len].merge(attention_entropy(t, spans, EntropyMode::raw));
        out.entropy_pre[t.seq_len].merge(
            attention_entropy(t, spans, EntropyMode::preprocessed));
    }
    for (auto& [L, bucket] : entries) out.mass[L] = aggregate_mass(bucket);
    return out;
}

template <class T>
AnalyzeOutput run_analyze_impl(const ExperimentConfig& cfg, std::ostream& log) {
    std::vector<AttentionTrace> traces;
    if (!cfg.analysis.traces.empty()) {
        for (const auto& path : cfg.analysis.traces) traces.push_back(load_trace(path));
    } else {
        const fs::path ckpt = cfg.checkpoint_path(cfg.analysis.checkpoint);
        if (!fs::exists(ckpt))
            throw std::runtime_error("analyze: checkpoint not found: " + ckpt.string());
        Model<T> model = load_checkpoint<T>(ckpt);
        traces = capture_analysis_traces(cfg, model);
        if (cfg.analysis.save_traces) {
            std::size_t i = 0;
            for (const auto& t : traces)
                save_trace(fs::path(cfg.out_dir) / "traces" /
                               ("trace_L" + std::to_string(t.seq_len) + "_" +
                                std::to_string(i++) + ".trace"),
                           t);
        }
    }
    AnalyzeOutput out = analyze_traces(traces);

    CsvWriter mass("analyze", cfg.config_hash);
    mass.header({"variant", "context_length", "layer_group", "begin", "needle",
                 "context", "end", "count"});
    for (const auto& [L, rep] : out.mass)
        for (const auto& row : rep.rows)
            mass.row({cfg.variant, std::to_string(L), row.group,
                      format_double(row.mass[0]), format_double(row.mass[1]),
                      format_double(row.mass[2]), format_double(row.mass[3]),
                      std::to_string(row.count)});
    atomic_write(fs::path(cfg.out_dir) / "mass.csv", mass.str());

    nlohmann::ordered_json mass_json;
    mass_json["_meta"] = artifact_meta("analyze", cfg);
    mass_json["variant"] = cfg.variant;
    nlohmann::ordered_json lengths = nlohmann::ordered_json::object();
    for (const auto& [L, rep] : out.mass) {
        nlohmann::ordered_json groups = nlohmann::ordered_json::object();
        for (const auto& row : rep.rows)
            groups[row.group] = {{"begin", row.mass[0]},
                                 {"needle", row.mass[1]},
                                 {"context", row.mass[2]},
                                 {"end", row.mass[3]},
                                 {"count", row.count}};
        for (const auto& w : rep.warnings) log << "analyze: " << w << "\n";
        lengths[std::to_string(L)] = groups;
    }
    mass_json["per_length"] = lengths;
    atomic_write(fs::path(cfg.out_dir) / "mass.json", mass_json.dump(2) + "\n");

    CsvWriter ent("analyze", cfg.config_hash);
    ent.header({"variant", "context_length", "mode", "entropy_nats", "rows"});
    for (const auto& [L, st] : out.entropy_raw)
        ent.row({cfg.variant, std::to_string(L), "raw", format_double(st.mean()),
                 std::to_string(st.rows)});
    for (const auto& [L, st] : out.entropy_pre)
        ent.row({cfg.variant, std::to_string(L), "preprocessed",
                 format_double(st.mean()), std::to_string(st.rows)});
    atomic_write(fs::path(cfg.out_dir) / "entropy.csv", ent.str());

    nlohmann::ordered_json ent_json;
    ent_json["_meta"] = artifact_meta("analyze", cfg);
    ent_json["variant"] = cfg.variant;
    nlohmann::ordered_json per_len = nlohmann::ordered_json::object();
    for (const auto& [L, st] : out.entropy_raw)
        per_len[std::to_string(L)] = {{"raw", st.mean()},
                                      {"preprocessed", out.entropy_pre.at(L).mean()}};
    ent_json["entropy_nats"] = per_len;
    atomic_write(fs::path(cfg.out_dir) / "entropy.json", ent_json.dump(2) + "\n");

    // smoothed key-position distribution for external plotting
    CsvWriter dist("analyze", cfg.config_hash);
    dist.header({"context_length", "position", "weight"});
    std::map<std::size_t, std::vector<double>> acc;
    std::map<std::size_t, std::size_t> acc_n;
    for (const auto& t : traces) {
        auto d = mean_preprocessed_distribution(t, SegmentSpans::from_trace(t));
        auto& a = acc[t.seq_len];
        if (a.empty()) a.assign(d.size(), 0.0);
        for (std::size_t i = 0; i < d.size(); ++i) a[i] += d[i];
        acc_n[t.seq_len] += 1;
    }
    for (auto& [L, a] : acc)
        for (std::size_t i = 0; i < a.size(); ++i)
            dist.row({std::to_string(L), std::to_string(i + SegmentSpans::kBeginLen),
                      format_double(a[i] / static_cast<double>(acc_n[L]))});
    atomic_write(fs::path(cfg.out_dir) / "distribution.csv", dist.str());
    return out;
}

inline AnalyzeOutput run_analyze(const ExperimentConfig& cfg, std::ostream& log) {
    if (cfg.precision == "f32") return run_analyze_impl<float>(cfg, log);
    return run_analyze_impl<double>(cfg, log);
}

// --- cost ------------------------------------------------------------------

inline std::vector<CostReport> run_cost(const ExperimentConfig& cfg, std::ostream& log) {
    const LayerPattern hybrid = cfg.build_pattern();
    const LayerPattern baseline = build_layer_pattern(
        cfg.model.n_layers, {1, 0}, 0, cfg.pattern.theta, Variant::rope_baseline);
    auto reports = efficiency_report(baseline, hybrid, cfg.model, cfg.cost.lengths,
                                     cfg.cost.bytes_per_elem);

    CsvWriter csv("cost", cfg.config_hash);
    csv.header({"context_length", "total_pairs", "baseline_pairs", "pair_ratio",
                "attn_flops", "kv_bytes", "baseline_kv_bytes", "kv_ratio",
                "kv_reduction_pct"});
    for (const auto& r : reports) {
        csv.row({std::to_string(r.context_length), std::to_string(r.total_pairs),
                 std::to_string(r.baseline_pairs), format_double(r.pair_ratio),
                 format_double(r.total_flops), std::to_string(r.total_kv_bytes),
                 std::to_string(r.baseline_kv_bytes), format_double(r.kv_ratio),
                 format_double(r.kv_reduction_pct)});
        log << "L=" << r.context_length << " kv_ratio " << format_double(r.kv_ratio)
            << " pair_ratio " << format_double(r.pair_ratio) << "\n";
    }
    atomic_write(fs::path(cfg.out_dir) / "cost.csv", csv.str());

    nlohmann::ordered_json j;
    j["_meta"] = artifact_meta("cost", cfg);
    j["variant"] = cfg.variant;
    j["bytes_per_elem"] = cfg.cost.bytes_per_elem;
    j["note"] = reports.empty() ? "" : reports.front().note;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json layers = nlohmann::ordered_json::array();
        for (const auto& lc : r.layers)
            layers.push_back({{"layer", lc.layer},
                              {"kind", lc.kind},
                              {"pairs", lc.pairs},
                              {"flops", lc.flops},
                              {"kv_bytes", lc.kv_bytes}});
        rows.push_back({{"context_length", r.context_length},
                        {"total_pairs", r.total_pairs},
                        {"baseline_pairs", r.baseline_pairs},
                        {"pair_ratio", r.pair_ratio},
                        {"attn_flops", r.total_flops},
                        {"kv_bytes", r.total_kv_bytes},
                        {"baseline_kv_bytes", r.baseline_kv_bytes},
                        {"kv_ratio", r.kv_ratio},
                        {"kv_reduction_pct", r.kv_reduction_pct},
                        {"layers", layers}});
    }
    j["reports"] = rows;
    atomic_write(fs::path(cfg.out_dir) / "cost.json", j.dump(2) + "\n");
    return reports;
}

// --- compare -----------------------------------------------------------------

inline void run_compare(const ExperimentConfig& cfg, std::ostream& log) {
    struct RunData {
        std::string name;
        nlohmann::json summary;
        nlohmann::json mass;  // null when absent
    };
    std::vector<RunData> runs;
    std::vector<std::string> lengths;  // union, insertion-ordered
    for (const auto& r : cfg.compare) {
        RunData d;
        d.name = r.name;
        const fs::path sp = fs::path(r.dir) / "summary.json";
        if (!fs::exists(sp))
            throw std::runtime_error("compare: missing " + sp.string());
        d.summary = nlohmann::json::parse(read_file(sp));
        const fs::path mp = fs::path(r.dir) / "mass.json";
        if (fs::exists(mp)) d.mass = nlohmann::json::parse(read_file(mp));
        for (const auto& [k, v] : d.summary.at("per_length").items()) {
            (void)v;
            if (std::find(lengths.begin(), lengths.end(), k) == lengths.end())
                lengths.push_back(k);
        }
        runs.push_back(std::move(d));
    }

    CsvWriter csv("compare", cfg.config_hash);
    std::vector<std::string> cols{"model", "needles_score"};
    for (const auto& L : lengths) cols.push_back("score_" + L);
    csv.header(cols);
    for (const auto& d : runs) {
        std::vector<std::string> row{d.name,
                                     format_double(d.summary.at("score").get<double>())};
        for (const auto& L : lengths) {
            const auto& pl = d.summary.at("per_length");
            row.push_back(pl.contains(L) ? format_double(pl.at(L).get<double>()) : "-");
        }
        csv.row(row);
        log << d.name << " needles score "
            << format_double(d.summary.at("score").get<double>()) << "\n";
    }
    atomic_write(fs::path(cfg.out_dir) / "compare.csv", csv.str());

    // Table-5-shaped mass join when mass reports are available
    bool any_mass = false;
    for (const auto& d : runs) any_mass = any_mass || !d.mass.is_null();
    if (any_mass) {
        CsvWriter mass("compare", cfg.config_hash);
        mass.header({"context_length", "model", "nope_begin", "nope_needle",
                     "nope_context", "nope_end", "rope_begin", "rope_needle",
                     "rope_context", "rope_end"});
        for (const auto& d : runs) {
            if (d.mass.is_null()) continue;
            for (const auto& [L, groups] : d.mass.at("per_length").items()) {
                std::vector<std::string> row{L, d.name};
                for (const std::string g : {"nope", "rope"}) {
                    if (groups.contains(g)) {
                        for (const std::string seg : {"begin", "needle", "context", "end"})
                            row.push_back(
                                format_double(groups.at(g).at(seg).get<double>()));
                    } else {
                        for (int s = 0; s < 4; ++s) row.push_back("-");
                    }
                }
                mass.row(row);
            }
        }
        atomic_write(fs::path(cfg.out_dir) / "compare_mass.csv", mass.str());
    }

    nlohmann::ordered_json j;
    j["_meta"] = artifact_meta("compare", cfg);
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& d : runs)
        arr.push_back({{"model", d.name},
                       {"needles_score", d.summary.at("score").get<double>()},
                       {"per_length", d.summary.at("per_length")}});
    j["runs"] = arr;
    atomic_write(fs::path(cfg.out_dir) / "compare.json", j.dump(2) + "\n");
}

// --- dispatch ----------------------------------------------------------------

// 0 on success; ConfigError and bad subcommands are the caller's concern
inline void run_subcommand(const std::string& name, const ExperimentConfig& cfg,
                           std::ostream& log) {
    if (name == "train")
        run_train(cfg, log);
    else if (name == "niah")
        run_niah(cfg, log);
    else if (name == "analyze")
        run_analyze(cfg, log);
    else if (name == "cost")
        run_cost(cfg, log);
    else if (name == "compare")
        run_compare(cfg, log);
    else
        throw std::invalid_argument("unknown subcommand: " + name);
}

}  // namespace attnlab
