#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace attnlab {

enum class MaskKind { causal_full, causal_swa };

inline std::string to_string(MaskKind k) {
    return k == MaskKind::causal_full ? "causal-full" : "causal-swa";
}

inline MaskKind mask_kind_from_string(const std::string& s) {
    if (s == "causal-full") return MaskKind::causal_full;
    if (s == "causal-swa") return MaskKind::causal_swa;
    throw std::invalid_argument("unknown mask kind: " + s);
}

// Causal attention mask, optionally restricted to a sliding window of S
// keys (inclusive of the query position). Stored as a predicate, never as
// a materialized matrix.
struct AttnMask {
    MaskKind kind = MaskKind::causal_full;
    std::size_t length = 0;
    std::size_t window = 0;  // meaningful for causal-swa only

    bool allowed(std::size_t i, std::size_t j) const {
        if (j > i) return false;
        return kind == MaskKind::causal_full || i - j < window;
    }

    // first allowed key for query i (inclusive)
    std::size_t window_start(std::size_t i) const {
        if (kind == MaskKind::causal_full || i + 1 <= window) return 0;
        return i + 1 - window;
    }

    // number of allowed keys for query i
    std::size_t row_width(std::size_t i) const { return i + 1 - window_start(i); }
};

inline AttnMask build_mask(std::size_t L, MaskKind kind,
                           std::optional<std::size_t> S = std::nullopt) {
    if (L < 1) throw std::invalid_argument("build_mask: L must be >= 1");
    AttnMask m;
    m.kind = kind;
    m.length = L;
    if (kind == MaskKind::causal_swa) {
        if (!S.has_value())
            throw std::invalid_argument("build_mask: window size S required for causal-swa");
        if (*S < 1) throw std::invalid_argument("build_mask: S must be >= 1");
        m.window = *S;
    }
    return m;
}

}  // namespace attnlab
