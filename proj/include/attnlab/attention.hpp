#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "attnlab/autodiff.hpp"
#include "attnlab/mask.hpp"
#include "attnlab/rope.hpp"
#include "attnlab/tensor.hpp"

namespace attnlab {

// Learnable per-layer query/key layer-norm gains, applied per head along the
// head dimension. One gain vector per projection, shared across heads.
template <class T>
struct QKNormParams {
    Tensor<T> q_gain;  // [head_dim]
    Tensor<T> k_gain;  // [head_dim]
    T epsilon = T(1e-6);
};

template <class T>
std::pair<Tensor<T>, Tensor<T>> apply_qk_norm(const Tensor<T>& q, const Tensor<T>& k,
                                              const QKNormParams<T>& params) {
    return {layer_norm_rows(q, params.q_gain, params.epsilon),
            layer_norm_rows(k, params.k_gain, params.epsilon)};
}

// Token-index spans carried alongside a captured trace so the analysis side
// can reconstruct segment boundaries.
struct TraceSpans {
    std::size_t needle_begin = 0;
    std::size_t needle_end = 0;
    std::size_t query_begin = 0;  // end segment = [query_begin, seq_len)
};

// Post-softmax attention weights, one [L, L] matrix per (layer, head),
// zero on masked pairs. Always stored in double precision.
struct AttentionTrace {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t seq_len = 0;
    std::vector<std::string> kinds;  // per-layer tag, e.g. "nope-full"
    std::optional<TraceSpans> spans;
    std::vector<double> w;  // [layer][head][i][j] row-major

    void init(std::size_t layers, std::size_t heads, std::size_t L) {
        n_layers = layers;
        n_heads = heads;
        seq_len = L;
        kinds.assign(layers, "unspecified");
        w.assign(layers * heads * L * L, 0.0);
    }

    double* slab(std::size_t layer) {
        return w.data() + layer * n_heads * seq_len * seq_len;
    }
    const double* slab(std::size_t layer) const {
        return w.data() + layer * n_heads * seq_len * seq_len;
    }
    double at(std::size_t l, std::size_t h, std::size_t i, std::size_t j) const {
        return w[((l * n_heads + h) * seq_len + i) * seq_len + j];
    }
};

// Banded storage of softmax weights kept for the backward pass. Row i of
// every head holds mask.row_width(i) entries starting at window_start(i).
template <class T>
struct AttnProbs {
    std::size_t L = 0;
    std::size_t n_heads = 0;
    std::vector<std::size_t> row_offset;  // length L+1
    std::vector<T> p;                     // [n_heads, band]

    T* row(std::size_t head, std::size_t i) {
        return p.data() + head * row_offset[L] + row_offset[i];
    }
    const T* row(std::size_t head, std::size_t i) const {
        return p.data() + head * row_offset[L] + row_offset[i];
    }
};

namespace detail {

template <class T>
using EigRowMat = ConstMatMap<T>;

template <class T>
ConstMatMap<T> head_mat(const Tensor<T>& x, std::size_t h) {
    const std::size_t L = x.extent(1), d = x.extent(2);
    return ConstMatMap<T>(x.data.data() + h * L * d, static_cast<Eigen::Index>(L),
                          static_cast<Eigen::Index>(d));
}

template <class T>
MatMap<T> head_mat(Tensor<T>& x, std::size_t h) {
    const std::size_t L = x.extent(1), d = x.extent(2);
    return MatMap<T>(x.data.data() + h * L * d, static_cast<Eigen::Index>(L),
                     static_cast<Eigen::Index>(d));
}

}  // namespace detail

// Masked grouped-query scaled-dot-product attention.
// q: [nq, L, d], k/v: [nkv, L, d]. Each kv head serves nq/nkv query heads.
// Writes softmax weights into `probs` (for backward) and/or a dense double
// slab of shape [nq, L, L] (for analysis) when the pointers are non-null.
template <class T>
Tensor<T> attend_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                         const AttnMask& mask, std::size_t n_query_heads,
                         std::size_t n_kv_heads, AttnProbs<T>* probs = nullptr,
                         double* trace_slab = nullptr) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
        throw std::invalid_argument("attend: q/k/v must be [heads, L, d]");
    if (n_kv_heads == 0 || n_query_heads % n_kv_heads != 0)
        throw std::invalid_argument("attend: query heads not divisible by kv heads");
    if (q.extent(0) != n_query_heads || k.extent(0) != n_kv_heads ||
        v.extent(0) != n_kv_heads)
        throw std::invalid_argument("attend: head counts do not match tensors");
    const std::size_t L = q.extent(1), d = q.extent(2);
    if (k.extent(1) != L || v.extent(1) != L || k.extent(2) != d || v.extent(2) != d)
        throw std::invalid_argument("attend: k/v shape mismatch");
    if (mask.length != L)
        throw std::invalid_argument("attend: mask length does not match sequence");

    const std::size_t group = n_query_heads / n_kv_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    if (probs) {
        probs->L = L;
        probs->n_heads = n_query_heads;
        probs->row_offset.resize(L + 1);
        probs->row_offset[0] = 0;
        for (std::size_t i = 0; i < L; ++i)
            probs->row_offset[i + 1] = probs->row_offset[i] + mask.row_width(i);
        probs->p.assign(n_query_heads * probs->row_offset[L], T(0));
    }

    Tensor<T> out({n_query_heads, L, d});
    std::vector<T> row(L);
    for (std::size_t h = 0; h < n_query_heads; ++h) {
        const auto K = detail::head_mat(k, h / group);
        const auto V = detail::head_mat(v, h / group);
        const auto Q = detail::head_mat(q, h);
        auto O = detail::head_mat(out, h);
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t w0 = mask.window_start(i);
            const std::size_t len = i + 1 - w0;
            VecMap<T> s(row.data(), static_cast<Eigen::Index>(len));
            s.noalias() = K.middleRows(static_cast<Eigen::Index>(w0),
                                       static_cast<Eigen::Index>(len)) *
                          Q.row(static_cast<Eigen::Index>(i)).transpose();
            s *= scale;
            softmax_row_inplace(row.data(), len);
            O.row(static_cast<Eigen::Index>(i)).noalias() =
                s.transpose() * V.middleRows(static_cast<Eigen::Index>(w0),
                                             static_cast<Eigen::Index>(len));
            if (probs) std::copy_n(row.data(), len, probs->row(h, i));
            if (trace_slab) {
                double* trow = trace_slab + (h * L + i) * L + w0;
                for (std::size_t j = 0; j < len; ++j)
                    trow[j] = static_cast<double>(row[j]);
            }
        }
    }
    return out;
}

template <class T>
void attend_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                     const AttnMask& mask, std::size_t n_query_heads,
                     std::size_t n_kv_heads, const AttnProbs<T>& probs,
                     const Tensor<T>& d_out, Tensor<T>& d_q, Tensor<T>& d_k,
                     Tensor<T>& d_v) {
    const std::size_t L = q.extent(1), d = q.extent(2);
    const std::size_t group = n_query_heads / n_kv_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<T> dp(L), ds(L);
    for (std::size_t h = 0; h < n_query_heads; ++h) {
        const auto K = detail::head_mat(k, h / group);
        const auto V = detail::head_mat(v, h / group);
        const auto Q = detail::head_mat(q, h);
        const auto dO = detail::head_mat(d_out, h);
        auto dQ = detail::head_mat(d_q, h);
        auto dK = detail::head_mat(d_k, h / group);
        auto dV = detail::head_mat(d_v, h / group);
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t w0 = mask.window_start(i);
            const std::size_t len = i + 1 - w0;
            const Eigen::Index ew0 = static_cast<Eigen::Index>(w0);
            const Eigen::Index elen = static_cast<Eigen::Index>(len);
            const Eigen::Index ei = static_cast<Eigen::Index>(i);
            ConstVecMap<T> p(probs.row(h, i), elen);
            VecMap<T> dpv(dp.data(), elen);
            VecMap<T> dsv(ds.data(), elen);
            dpv.noalias() = V.middleRows(ew0, elen) * dO.row(ei).transpose();
            const T dot = p.dot(dpv);
            dsv = (p.array() * (dpv.array() - dot)).matrix();
            dQ.row(ei).noalias() +=
                (K.middleRows(ew0, elen).transpose() * dsv).transpose() * scale;
            dK.middleRows(ew0, elen).noalias() += (dsv * Q.row(ei)) * scale;
            dV.middleRows(ew0, elen).noalias() += p * dO.row(ei);
        }
    }
}

template <class T>
struct AttendResult {
    Tensor<T> output;
    std::optional<AttentionTrace> trace;
};

// One-shot attention with optional weight capture; trace rows sum to 1 and
// are exactly zero on masked pairs.
template <class T>
AttendResult<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       const AttnMask& mask, std::size_t n_query_heads,
                       std::size_t n_kv_heads, bool capture = false,
                       const std::string& kind_tag = "") {
    AttendResult<T> r;
    if (capture) {
        AttentionTrace t;
        t.init(1, n_query_heads, mask.length);
        t.kinds[0] = kind_tag.empty() ? to_string(mask.kind) : kind_tag;
        r.output = attend_forward(q, k, v, mask, n_query_heads, n_kv_heads,
                                  static_cast<AttnProbs<T>*>(nullptr), t.slab(0));
        r.trace = std::move(t);
    } else {
        r.output = attend_forward(q, k, v, mask, n_query_heads, n_kv_heads);
    }
    return r;
}

namespace ad {

// Rotation is orthogonal per pair, so the backward pass applies the inverse
// rotation to the adjoint.
template <class T>
Id<T> rope(GradTape<T>& t, Id<T> x, std::shared_ptr<const std::vector<std::size_t>> positions,
           std::type_identity_t<std::shared_ptr<const RopeCache<T>>> cache) {
    Tensor<T> out = apply_rope(t.val(x), *positions, *cache);
    const Id<T> id = t.size();
    return t.node(std::move(out), [x, positions, cache, id](GradTape<T>& tp) {
        const Tensor<T>& g = tp.grad(id);
        Tensor<T>& gx = tp.grad(x);
        const std::size_t H = g.extent(0), L = g.extent(1), d = g.extent(2);
        std::vector<T> row(d);
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < L; ++i) {
                std::copy_n(g.data.data() + (h * L + i) * d, d, row.data());
                rope_rotate_row(row.data(), *cache, (*positions)[i], -1);
                T* dst = gx.data.data() + (h * L + i) * d;
                for (std::size_t kk = 0; kk < d; ++kk) dst[kk] += row[kk];
            }
    });
}

// keep_probs=false builds an inference-only node whose backward throws.
template <class T>
Id<T> attend(GradTape<T>& t, Id<T> q, Id<T> k, Id<T> v, const AttnMask& mask,
             std::size_t n_query_heads, std::size_t n_kv_heads, bool keep_probs,
             double* trace_slab = nullptr) {
    auto probs = keep_probs ? std::make_shared<AttnProbs<T>>() : nullptr;
    Tensor<T> out = attend_forward(t.val(q), t.val(k), t.val(v), mask,
                                   n_query_heads, n_kv_heads, probs.get(), trace_slab);
    const Id<T> id = t.size();
    return t.node(std::move(out),
                  [q, k, v, mask, n_query_heads, n_kv_heads, probs, id](GradTape<T>& tp) {
                      if (!probs)
                          throw std::logic_error(
                              "attend: backward requested on an inference-only node");
                      attend_backward(tp.val(q), tp.val(k), tp.val(v), mask,
                                      n_query_heads, n_kv_heads, *probs, tp.grad(id),
                                      tp.grad(q), tp.grad(k), tp.grad(v));
                  });
}

}  // namespace ad

}  // namespace attnlab
