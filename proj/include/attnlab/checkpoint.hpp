#pragma once

#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "attnlab/io_util.hpp"
#include "attnlab/model.hpp"

namespace attnlab {

// Checkpoint container: magic line, JSON header line (config, pattern, dtype,
// named tensor table in for_each_param order), then the tensor payloads as
// raw little-endian scalars in table order. The byte layout is deterministic
// so identical runs hash identically.
inline constexpr const char* kCheckpointMagic = "attnlab checkpoint v1";

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    return {{"emb_dim", c.emb_dim},         {"ffn_dim", c.ffn_dim},
            {"n_layers", c.n_layers},       {"n_query_heads", c.n_query_heads},
            {"n_kv_heads", c.n_kv_heads},   {"vocab_size", c.vocab_size},
            {"max_seq", c.max_seq}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.emb_dim = j.at("emb_dim").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_query_heads = j.at("n_query_heads").get<std::size_t>();
    c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    return c;
}

inline nlohmann::ordered_json pattern_to_json(const LayerPattern& p) {
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (const auto& s : p.layers) {
        nlohmann::ordered_json j = {{"positional", to_string(s.positional)},
                                    {"qk_norm", s.qk_norm},
                                    {"mask", to_string(s.mask_kind)}};
        if (s.positional == Positional::rope) j["theta"] = s.theta;
        if (s.mask_kind == MaskKind::causal_swa) j["window"] = s.window;
        layers.push_back(j);
    }
    return {{"ratio", {p.ratio.first, p.ratio.second}}, {"layers", layers}};
}

inline LayerPattern pattern_from_json(const nlohmann::json& j) {
    LayerPattern p;
    p.ratio = {j.at("ratio")[0].get<std::size_t>(), j.at("ratio")[1].get<std::size_t>()};
    std::size_t idx = 0;
    for (const auto& lj : j.at("layers")) {
        LayerSpec s;
        s.index = idx++;
        s.positional = positional_from_string(lj.at("positional").get<std::string>());
        s.qk_norm = lj.at("qk_norm").get<bool>();
        s.mask_kind = mask_kind_from_string(lj.at("mask").get<std::string>());
        if (lj.contains("theta")) s.theta = lj["theta"].get<double>();
        if (lj.contains("window")) s.window = lj["window"].get<std::size_t>();
        p.layers.push_back(s);
    }
    return p;
}

template <class T>
std::string serialize_checkpoint(const Model<T>& m) {
    nlohmann::ordered_json h;
    h["model"] = config_to_json(m.cfg);
    h["pattern"] = pattern_to_json(m.pattern);
    h["dtype"] = sizeof(T) == 8 ? "f64" : "f32";
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    std::size_t total = 0;
    for_each_param(m.weights, [&](const std::string& name, const Tensor<T>& t) {
        table.push_back({{"name", name}, {"shape", t.shape}});
        total += t.size();
    });
    h["tensors"] = table;
    std::string out = std::string(kCheckpointMagic) + "\n" + h.dump() + "\n";
    std::size_t head = out.size();
    out.resize(head + total * sizeof(T));
    for_each_param(m.weights, [&](const std::string&, const Tensor<T>& t) {
        std::memcpy(out.data() + head, t.data.data(), t.size() * sizeof(T));
        head += t.size() * sizeof(T);
    });
    return out;
}

template <class T>
Model<T> parse_checkpoint(const std::string& bytes) {
    std::size_t p0 = bytes.find('\n');
    if (p0 == std::string::npos || bytes.substr(0, p0) != kCheckpointMagic)
        throw std::runtime_error("checkpoint: bad magic line");
    std::size_t p1 = bytes.find('\n', p0 + 1);
    if (p1 == std::string::npos) throw std::runtime_error("checkpoint: missing header");
    const auto h = nlohmann::json::parse(bytes.substr(p0 + 1, p1 - p0 - 1));
    const ModelConfig cfg = config_from_json(h.at("model"));
    const LayerPattern pattern = pattern_from_json(h.at("pattern"));
    const std::string dtype = h.at("dtype").get<std::string>();
    const std::size_t elem = dtype == "f64" ? 8 : 4;

    Model<T> m(cfg, pattern, init_weights<T>(cfg, pattern, 0, 0.0));
    std::size_t off = p1 + 1;
    std::size_t ti = 0;
    const auto& table = h.at("tensors");
    for_each_param(m.weights, [&](const std::string& name, Tensor<T>& t) {
        if (ti >= table.size() || table[ti].at("name").get<std::string>() != name)
            throw std::runtime_error("checkpoint: tensor table mismatch at " + name);
        const auto shape = table[ti].at("shape").get<std::vector<std::size_t>>();
        if (shape != t.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        const std::size_t n = t.size();
        if (off + n * elem > bytes.size())
            throw std::runtime_error("checkpoint: truncated payload");
        if (elem == sizeof(T)) {
            std::memcpy(t.data.data(), bytes.data() + off, n * sizeof(T));
        } else if (elem == 8) {
            std::vector<double> tmp(n);
            std::memcpy(tmp.data(), bytes.data() + off, n * 8);
            for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<T>(tmp[i]);
        } else {
            std::vector<float> tmp(n);
            std::memcpy(tmp.data(), bytes.data() + off, n * 4);
            for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<T>(tmp[i]);
        }
        off += n * elem;
        ++ti;
    });
    if (off != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
    return m;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& m) {
    atomic_write(path, serialize_checkpoint(m));
}

template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint<T>(read_file(path));
}

}  // namespace attnlab
