#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "attnlab/tensor.hpp"

namespace attnlab {

// Precomputed rotation tables. Pair i of the head dimension rotates by
// angle p * theta^(-2i/d) at position p; adjacent dimensions (2i, 2i+1)
// form a pair.
template <class T>
struct RopeCache {
    double theta = 0.0;
    std::size_t head_dim = 0;
    std::size_t max_pos = 0;
    std::vector<T> cos_tab;  // [max_pos, head_dim/2]
    std::vector<T> sin_tab;

    std::size_t n_pairs() const { return head_dim / 2; }
    T cos_at(std::size_t pos, std::size_t pair) const {
        return cos_tab[pos * n_pairs() + pair];
    }
    T sin_at(std::size_t pos, std::size_t pair) const {
        return sin_tab[pos * n_pairs() + pair];
    }
    double frequency(std::size_t pair) const {
        return std::pow(theta, -2.0 * static_cast<double>(pair) /
                                   static_cast<double>(head_dim));
    }
};

template <class T = double>
RopeCache<T> build_rope_cache(double theta, std::size_t head_dim,
                              std::size_t max_pos) {
    if (head_dim % 2 != 0)
        throw std::invalid_argument("build_rope_cache: head_dim must be even");
    if (theta <= 0.0)
        throw std::invalid_argument("build_rope_cache: theta must be positive");
    if (max_pos < 1)
        throw std::invalid_argument("build_rope_cache: max_pos must be >= 1");
    RopeCache<T> c;
    c.theta = theta;
    c.head_dim = head_dim;
    c.max_pos = max_pos;
    const std::size_t pairs = head_dim / 2;
    c.cos_tab.resize(max_pos * pairs);
    c.sin_tab.resize(max_pos * pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
        const double freq = c.frequency(i);
        for (std::size_t p = 0; p < max_pos; ++p) {
            const double angle = static_cast<double>(p) * freq;
            c.cos_tab[p * pairs + i] = static_cast<T>(std::cos(angle));
            c.sin_tab[p * pairs + i] = static_cast<T>(std::sin(angle));
        }
    }
    return c;
}

// Rotate one row (length head_dim) in place by the angles of `pos`.
// `dir` = -1 applies the inverse rotation (used by the backward pass).
template <class T>
void rope_rotate_row(T* row, const RopeCache<T>& cache, std::size_t pos,
                     int dir = 1) {
    const std::size_t pairs = cache.n_pairs();
    for (std::size_t i = 0; i < pairs; ++i) {
        const T c = cache.cos_at(pos, i);
        const T s = dir < 0 ? -cache.sin_at(pos, i) : cache.sin_at(pos, i);
        const T x0 = row[2 * i];
        const T x1 = row[2 * i + 1];
        row[2 * i] = x0 * c - x1 * s;
        row[2 * i + 1] = x0 * s + x1 * c;
    }
}

// x: [heads, L, head_dim]; positions: length L.
template <class T>
Tensor<T> apply_rope(const Tensor<T>& x, const std::vector<std::size_t>& positions,
                     const RopeCache<T>& cache) {
    if (x.rank() != 3) throw std::invalid_argument("apply_rope: expected [heads, L, d]");
    const std::size_t H = x.extent(0), L = x.extent(1), d = x.extent(2);
    if (d != cache.head_dim)
        throw std::invalid_argument("apply_rope: head_dim does not match cache");
    if (positions.size() != L)
        throw std::invalid_argument("apply_rope: positions length mismatch");
    for (std::size_t p : positions)
        if (p >= cache.max_pos)
            throw std::invalid_argument("apply_rope: position out of cache range");
    Tensor<T> out = x;
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < L; ++i)
            rope_rotate_row(out.data.data() + (h * L + i) * d, cache, positions[i]);
    return out;
}

inline std::vector<std::size_t> iota_positions(std::size_t L) {
    std::vector<std::size_t> p(L);
    for (std::size_t i = 0; i < L; ++i) p[i] = i;
    return p;
}

}  // namespace attnlab
