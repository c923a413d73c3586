#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace attnlab {

// Dense row-major tensor. Rank is dynamic but everything in this library
// uses ranks 1..3.
template <class T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, T fill = T(0))
        : shape(std::move(s)), data(count(shape), fill) {}

    static Tensor from(std::vector<std::size_t> s, std::vector<T> d) {
        if (count(s) != d.size())
            throw std::invalid_argument("tensor data length does not match shape");
        Tensor t;
        t.shape = std::move(s);
        t.data = std::move(d);
        return t;
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return s.empty() ? 0 : n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t i) const { return shape.at(i); }
    std::size_t last_extent() const { return shape.back(); }
    // number of rows when viewed as [*, last_extent()]
    std::size_t row_count() const { return size() / last_extent(); }

    T& operator()(std::size_t i) { return data[i]; }
    T operator()(std::size_t i) const { return data[i]; }
    T& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    T operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    T operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T x : data)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i)
            out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <class T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<EigenMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const EigenMat<T>>;
template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// View a rank>=2 tensor as a matrix [rows, last extent].
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
    return ConstMatMap<T>(t.data.data(),
                          static_cast<Eigen::Index>(t.row_count()),
                          static_cast<Eigen::Index>(t.last_extent()));
}
template <class T>
MatMap<T> as_matrix(Tensor<T>& t) {
    return MatMap<T>(t.data.data(),
                     static_cast<Eigen::Index>(t.row_count()),
                     static_cast<Eigen::Index>(t.last_extent()));
}

// c = a @ b for a [m,k], b [k,n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.last_extent() != b.extent(0))
        throw std::invalid_argument("matmul inner dimensions mismatch");
    Tensor<T> c({a.row_count(), b.extent(b.rank() - 1)});
    as_matrix(c).noalias() = as_matrix(a) * as_matrix(b);
    return c;
}

// c = a @ b^T for a [m,k], b [n,k]
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.last_extent() != b.last_extent())
        throw std::invalid_argument("matmul_nt inner dimensions mismatch");
    Tensor<T> c({a.row_count(), b.row_count()});
    as_matrix(c).noalias() = as_matrix(a) * as_matrix(b).transpose();
    return c;
}

// c = a^T @ b for a [k,m], b [k,n]
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.row_count() != b.row_count())
        throw std::invalid_argument("matmul_tn inner dimensions mismatch");
    Tensor<T> c({a.last_extent(), b.last_extent()});
    as_matrix(c).noalias() = as_matrix(a).transpose() * as_matrix(b);
    return c;
}

// In-place stable softmax of a contiguous row; entries where keep==false
// (when keep is non-null) are forced to exactly zero and excluded from the
// normalization. Returns false when every entry is masked out.
template <class T>
bool softmax_row_inplace(T* row, std::size_t n, const std::uint8_t* keep = nullptr) {
    T maxv = std::numeric_limits<T>::lowest();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
        if (keep && !keep[j]) continue;
        any = true;
        maxv = std::max(maxv, row[j]);
    }
    if (!any) return false;
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
        if (keep && !keep[j]) {
            row[j] = T(0);
            continue;
        }
        row[j] = std::exp(row[j] - maxv);
        sum += row[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
    return true;
}

// Stable softmax over the last axis. Masked entries (mask value 0) come out
// as exact zeros; a fully masked row is an error.
template <class T>
Tensor<T> softmax_stable(const Tensor<T>& logits,
                         const Tensor<std::uint8_t>* mask = nullptr) {
    if (logits.rank() == 0 || logits.size() == 0)
        throw std::invalid_argument("softmax_stable: empty tensor");
    if (mask && mask->shape != logits.shape)
        throw std::invalid_argument("softmax_stable: mask shape mismatch");
    Tensor<T> out = logits;
    const std::size_t n = out.last_extent();
    const std::size_t rows = out.row_count();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::uint8_t* keep = mask ? mask->data.data() + r * n : nullptr;
        if (!softmax_row_inplace(out.data.data() + r * n, n, keep))
            throw std::invalid_argument("empty attention row");
    }
    return out;
}

// y = gain * (x - mean) / sqrt(var + eps), population variance, no bias.
template <class T>
void layer_norm_row_inplace(const T* x, const T* gain, std::size_t n, T eps, T* y) {
    T mean = T(0);
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T d = x[i] - mean;
        var += d * d;
    }
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) y[i] = gain[i] * (x[i] - mean) * inv;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
    if (x.rank() != 1 || x.size() == 0)
        throw std::invalid_argument("layer_norm: x must be a nonempty vector");
    if (gain.size() != x.size())
        throw std::invalid_argument("layer_norm: gain length mismatch");
    Tensor<T> y(x.shape);
    layer_norm_row_inplace(x.data.data(), gain.data.data(), x.size(), eps,
                           y.data.data());
    return y;
}

// Row-wise layer norm over the last axis; gain has the row length.
template <class T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
    const std::size_t n = x.last_extent();
    if (gain.size() != n)
        throw std::invalid_argument("layer_norm_rows: gain length mismatch");
    Tensor<T> y(x.shape);
    for (std::size_t r = 0; r < x.row_count(); ++r)
        layer_norm_row_inplace(x.data.data() + r * n, gain.data.data(), n, eps,
                               y.data.data() + r * n);
    return y;
}

// y = gain * x / sqrt(mean(x^2) + eps)
template <class T>
Tensor<T> rmsnorm_rows(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
    const std::size_t n = x.last_extent();
    if (gain.size() != n)
        throw std::invalid_argument("rmsnorm_rows: gain length mismatch");
    Tensor<T> y(x.shape);
    for (std::size_t r = 0; r < x.row_count(); ++r) {
        const T* xr = x.data.data() + r * n;
        T* yr = y.data.data() + r * n;
        T ms = T(0);
        for (std::size_t i = 0; i < n; ++i) ms += xr[i] * xr[i];
        ms /= static_cast<T>(n);
        const T inv = T(1) / std::sqrt(ms + eps);
        for (std::size_t i = 0; i < n; ++i) yr[i] = gain.data[i] * xr[i] * inv;
    }
    return y;
}

template <class T>
T silu(T x) {
    return x / (T(1) + std::exp(-x));
}

}  // namespace attnlab
