#pragma once

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnlab/attention.hpp"

namespace attnlab {

enum class Segment { Begin = 0, Needle = 1, Context = 2, End = 3 };

inline const char* segment_name(Segment s) {
    switch (s) {
        case Segment::Begin: return "begin";
        case Segment::Needle: return "needle";
        case Segment::Context: return "context";
        case Segment::End: return "end";
    }
    return "?";
}

// Four spans that partition [0, L): Begin = the first 10 tokens, Needle and
// End as given, Context = everything else.
struct SegmentSpans {
    std::size_t seq_len = 0;
    std::size_t needle_begin = 0;
    std::size_t needle_end = 0;
    std::size_t end_begin = 0;

    static constexpr std::size_t kBeginLen = 10;

    void validate() const {
        const bool ok = kBeginLen <= needle_begin && needle_begin < needle_end &&
                        needle_end <= end_begin && end_begin < seq_len;
        if (!ok)
            throw std::invalid_argument(
                "segment spans do not partition the sequence");
    }

    Segment segment_of(std::size_t j) const {
        if (j < kBeginLen) return Segment::Begin;
        if (j >= needle_begin && j < needle_end) return Segment::Needle;
        if (j >= end_begin) return Segment::End;
        return Segment::Context;
    }

    static SegmentSpans from_trace(const AttentionTrace& t) {
        if (!t.spans)
            throw std::invalid_argument("trace carries no segment spans");
        SegmentSpans s;
        s.seq_len = t.seq_len;
        s.needle_begin = t.spans->needle_begin;
        s.needle_end = t.spans->needle_end;
        s.end_begin = t.spans->query_begin;
        s.validate();
        return s;
    }
};

struct LayerHeadMass {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::string kind;
    std::array<double, 4> mass{};  // begin, needle, context, end
};

// For each (layer, head): sum weights per key segment, averaged over the
// query rows of the End span. Masses per (layer, head) sum to 1 when the
// trace is row-stochastic.
inline std::vector<LayerHeadMass> attention_mass(const AttentionTrace& trace,
                                                 const SegmentSpans& spans) {
    spans.validate();
    if (spans.seq_len != trace.seq_len)
        throw std::invalid_argument("attention_mass: span length mismatch");
    const std::size_t L = trace.seq_len;
    std::vector<Segment> seg(L);
    for (std::size_t j = 0; j < L; ++j) seg[j] = spans.segment_of(j);
    const double n_rows = static_cast<double>(L - spans.end_begin);

    std::vector<LayerHeadMass> out;
    out.reserve(trace.n_layers * trace.n_heads);
    for (std::size_t l = 0; l < trace.n_layers; ++l)
        for (std::size_t h = 0; h < trace.n_heads; ++h) {
            LayerHeadMass m;
            m.layer = l;
            m.head = h;
            m.kind = trace.kinds[l];
            for (std::size_t i = spans.end_begin; i < L; ++i) {
                const double* row = trace.w.data() + ((l * trace.n_heads + h) * L + i) * L;
                for (std::size_t j = 0; j < L; ++j)
                    m.mass[static_cast<std::size_t>(seg[j])] += row[j];
            }
            for (auto& v : m.mass) v /= n_rows;
            out.push_back(std::move(m));
        }
    return out;
}

// layer-kind group used by the reports: NoPE layers vs everything RoPE-based
inline std::string kind_group(const std::string& kind) {
    return kind.rfind("nope", 0) == 0 ? "nope" : "rope";
}

struct MassReport {
    struct Row {
        std::string group;
        std::array<double, 4> mass{};
        std::size_t count = 0;  // (layer, head, sample) entries averaged
    };
    std::vector<Row> rows;              // nope first, then rope, present groups only
    std::vector<std::string> warnings;  // one entry per omitted empty group
};

// Unweighted arithmetic mean within each (kind group, segment) over every
// (layer, head, sample) entry.
inline MassReport aggregate_mass(const std::vector<LayerHeadMass>& entries) {
    MassReport report;
    for (const std::string& group : {std::string("nope"), std::string("rope")}) {
        MassReport::Row row;
        row.group = group;
        for (const auto& e : entries) {
            if (kind_group(e.kind) != group) continue;
            for (std::size_t s = 0; s < 4; ++s) row.mass[s] += e.mass[s];
            ++row.count;
        }
        if (row.count == 0) {
            report.warnings.push_back("group '" + group + "' has no layers; omitted");
            continue;
        }
        for (auto& v : row.mass) v /= static_cast<double>(row.count);
        report.rows.push_back(std::move(row));
    }
    return report;
}

enum class EntropyMode { raw, preprocessed };

inline std::string to_string(EntropyMode m) {
    return m == EntropyMode::raw ? "raw" : "preprocessed";
}

// Drop the first 10 entries and the last ceil(3%) of the row, then apply a
// centered moving average of window min(100, remaining length). Windows are
// truncated at the edges. Output length equals the trimmed length.
inline std::vector<double> preprocess_distribution(const std::vector<double>& row) {
    const std::size_t L = row.size();
    const std::size_t cut =
        static_cast<std::size_t>(std::ceil(0.03 * static_cast<double>(L)));
    if (L <= 10 + cut)
        throw std::invalid_argument("preprocess_distribution: row too short");
    const std::size_t n = L - 10 - cut;
    const std::size_t w = std::min<std::size_t>(100, n);
    const std::size_t half_lo = (w - 1) / 2, half_hi = w / 2;

    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + row[10 + i];
    std::vector<double> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo = t >= half_lo ? t - half_lo : 0;
        const std::size_t hi = std::min(n - 1, t + half_hi);
        out[t] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
    }
    return out;
}

struct EntropyStats {
    double sum = 0.0;       // total entropy over rows, in nats
    std::size_t rows = 0;

    double mean() const { return rows == 0 ? 0.0 : sum / static_cast<double>(rows); }
    void merge(const EntropyStats& o) {
        sum += o.sum;
        rows += o.rows;
    }
};

inline double shannon_entropy(const double* p, std::size_t n) {
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j)
        if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
    return h;
}

// Shannon entropy (nats, 0*ln 0 := 0) of each End-span query row, pooled
// over rows, heads and layers. Preprocessed mode trims and smooths each row
// first, then renormalizes.
inline EntropyStats attention_entropy(const AttentionTrace& trace,
                                      const SegmentSpans& spans,
                                      EntropyMode mode = EntropyMode::raw) {
    spans.validate();
    if (spans.seq_len != trace.seq_len)
        throw std::invalid_argument("attention_entropy: span length mismatch");
    const std::size_t L = trace.seq_len;
    EntropyStats stats;
    std::vector<double> scratch;
    for (std::size_t l = 0; l < trace.n_layers; ++l)
        for (std::size_t h = 0; h < trace.n_heads; ++h)
            for (std::size_t i = spans.end_begin; i < L; ++i) {
                const double* row = trace.w.data() + ((l * trace.n_heads + h) * L + i) * L;
                if (mode == EntropyMode::raw) {
                    stats.sum += shannon_entropy(row, L);
                    ++stats.rows;
                } else {
                    scratch.assign(row, row + L);
                    auto smooth = preprocess_distribution(scratch);
                    double total = 0.0;
                    for (double v : smooth) total += v;
                    if (total <= 0.0) continue;  // whole mass was trimmed away
                    for (double& v : smooth) v /= total;
                    stats.sum += shannon_entropy(smooth.data(), smooth.size());
                    ++stats.rows;
                }
            }
    return stats;
}

inline EntropyStats attention_entropy(const AttentionTrace& trace,
                                      EntropyMode mode = EntropyMode::raw) {
    return attention_entropy(trace, SegmentSpans::from_trace(trace), mode);
}

// Mean smoothed key-position distribution over End-span rows, heads and
// layers; the plotting payload behind the per-position CSV artifact.
inline std::vector<double> mean_preprocessed_distribution(const AttentionTrace& trace,
                                                          const SegmentSpans& spans) {
    spans.validate();
    const std::size_t L = trace.seq_len;
    std::vector<double> acc;
    std::size_t count = 0;
    std::vector<double> scratch;
    for (std::size_t l = 0; l < trace.n_layers; ++l)
        for (std::size_t h = 0; h < trace.n_heads; ++h)
            for (std::size_t i = spans.end_begin; i < L; ++i) {
                const double* row = trace.w.data() + ((l * trace.n_heads + h) * L + i) * L;
                scratch.assign(row, row + L);
                auto smooth = preprocess_distribution(scratch);
                if (acc.empty()) acc.assign(smooth.size(), 0.0);
                for (std::size_t t = 0; t < smooth.size(); ++t) acc[t] += smooth[t];
                ++count;
            }
    if (count > 0)
        for (double& v : acc) v /= static_cast<double>(count);
    return acc;
}

}  // namespace attnlab
