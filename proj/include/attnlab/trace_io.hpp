#pragma once

#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "attnlab/attention.hpp"
#include "attnlab/io_util.hpp"

namespace attnlab {

// Trace container: one magic line, one JSON header line, then the weight
// matrices as raw little-endian float64, layer-major then head then row-major
// [L, L]. Spans ride in the header when present.
inline constexpr const char* kTraceMagic = "attnlab trace v1";

inline std::string serialize_trace(const AttentionTrace& t) {
    nlohmann::ordered_json h;
    h["layers"] = t.n_layers;
    h["heads"] = t.n_heads;
    h["seq_len"] = t.seq_len;
    h["kinds"] = t.kinds;
    h["dtype"] = "f64";
    if (t.spans) {
        h["spans"] = {{"needle_begin", t.spans->needle_begin},
                      {"needle_end", t.spans->needle_end},
                      {"query_begin", t.spans->query_begin}};
    }
    std::string out = std::string(kTraceMagic) + "\n" + h.dump() + "\n";
    const std::size_t bytes = t.w.size() * sizeof(double);
    const std::size_t head = out.size();
    out.resize(head + bytes);
    std::memcpy(out.data() + head, t.w.data(), bytes);
    return out;
}

inline AttentionTrace parse_trace(const std::string& bytes) {
    std::size_t p0 = bytes.find('\n');
    if (p0 == std::string::npos || bytes.substr(0, p0) != kTraceMagic)
        throw std::runtime_error("trace: bad magic line");
    std::size_t p1 = bytes.find('\n', p0 + 1);
    if (p1 == std::string::npos) throw std::runtime_error("trace: missing header");
    const auto h = nlohmann::json::parse(bytes.substr(p0 + 1, p1 - p0 - 1));
    AttentionTrace t;
    t.init(h.at("layers").get<std::size_t>(), h.at("heads").get<std::size_t>(),
           h.at("seq_len").get<std::size_t>());
    t.kinds = h.at("kinds").get<std::vector<std::string>>();
    if (t.kinds.size() != t.n_layers)
        throw std::runtime_error("trace: kinds length mismatch");
    if (h.contains("spans")) {
        TraceSpans s;
        s.needle_begin = h["spans"].at("needle_begin").get<std::size_t>();
        s.needle_end = h["spans"].at("needle_end").get<std::size_t>();
        s.query_begin = h["spans"].at("query_begin").get<std::size_t>();
        t.spans = s;
    }
    const std::size_t need = t.w.size() * sizeof(double);
    if (bytes.size() - (p1 + 1) != need)
        throw std::runtime_error("trace: payload size mismatch");
    std::memcpy(t.w.data(), bytes.data() + p1 + 1, need);
    return t;
}

inline void save_trace(const std::filesystem::path& path, const AttentionTrace& t) {
    atomic_write(path, serialize_trace(t));
}

inline AttentionTrace load_trace(const std::filesystem::path& path) {
    return parse_trace(read_file(path));
}

}  // namespace attnlab
