#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "attnlab/tensor.hpp"

namespace attnlab {

// Reverse-mode tape. Nodes are created in topological order (a node's parents
// always precede it), so the backward pass is a reverse scan over creation
// order. Adjoints are allocated lazily; nodes never reached from the root
// keep no adjoint and their backward is skipped.
template <class T>
class GradTape {
public:
    using Id = std::size_t;
    using BackwardFn = std::function<void(GradTape&)>;

    Id leaf(Tensor<T> value) {
        slots_.push_back(Slot{std::move(value), {}, false, nullptr});
        return slots_.size() - 1;
    }

    Id node(Tensor<T> value, BackwardFn backward) {
        slots_.push_back(Slot{std::move(value), {}, false, std::move(backward)});
        return slots_.size() - 1;
    }

    const Tensor<T>& val(Id id) const { return slots_[id].value; }

    bool grad_defined(Id id) const { return slots_[id].has_adj; }

    Tensor<T>& grad(Id id) {
        Slot& s = slots_[id];
        if (!s.has_adj) {
            s.adj = Tensor<T>(s.value.shape);
            s.has_adj = true;
        }
        return s.adj;
    }

    void add_grad(Id id, const Tensor<T>& g) {
        Tensor<T>& a = grad(id);
        for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += g.data[i];
    }

    // Seeds the scalar root with 1 and walks the tape backwards.
    void backward(Id root) {
        if (val(root).size() != 1)
            throw std::invalid_argument("backward: root must be scalar");
        grad(root).data[0] = T(1);
        for (Id id = root + 1; id-- > 0;) {
            Slot& s = slots_[id];
            if (s.back && s.has_adj) s.back(*this);
        }
    }

    std::size_t size() const { return slots_.size(); }

private:
    struct Slot {
        Tensor<T> value;
        Tensor<T> adj;
        bool has_adj;
        BackwardFn back;
    };
    std::vector<Slot> slots_;
};

namespace ad {

template <class T>
using Id = typename GradTape<T>::Id;

template <class T>
Id<T> add(GradTape<T>& t, Id<T> a, Id<T> b) {
    if (!t.val(a).same_shape(t.val(b)))
        throw std::invalid_argument("add: shape mismatch");
    Tensor<T> out = t.val(a);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += t.val(b).data[i];
    const Id<T> id = t.size();
    return t.node(std::move(out), [a, b, id](GradTape<T>& tp) {
        const Tensor<T>& g = tp.grad(id);
        tp.add_grad(a, g);
        tp.add_grad(b, g);
    });
}

template <class T>
Id<T> matmul(GradTape<T>& t, Id<T> a, Id<T> b) {
    Tensor<T> out = attnlab::matmul(t.val(a), t.val(b));
    const Id<T> id = t.size();
    return t.node(std::move(out), [a, b, id](GradTape<T>& tp) {
        const Tensor<T>& g = tp.grad(id);
        as_matrix(tp.grad(a)).noalias() += as_matrix(g) * as_matrix(tp.val(b)).transpose();
        as_matrix(tp.grad(b)).noalias() += as_matrix(tp.val(a)).transpose() * as_matrix(g);
    });
}

// rows of `table` gathered by token id
template <class T>
Id<T> embedding(GradTape<T>& t, Id<T> table, const std::vector<int>& ids) {
    const Tensor<T>& tab = t.val(table);
    const std::size_t dim = tab.extent(1);
    Tensor<T> out({ids.size(), dim});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int tok = ids[i];
        if (tok < 0 || static_cast<std::size_t>(tok) >= tab.extent(0))
            throw std::invalid_argument("embedding: token id out of range");
        std::copy_n(tab.data.data() + static_cast<std::size_t>(tok) * dim, dim,
                    out.data.data() + i * dim);
    }
    const Id<T> id = t.size();
    return t.node(std::move(out), [table, ids, dim, id](GradTape<T>& tp) {
        const Tensor<T>& g = tp.grad(id);
        Tensor<T>& gt = tp.grad(table);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            T* dst = gt.data.data() + static_cast<std::size_t>(ids[i]) * dim;
            const T* src = g.data.data() + i * dim;
            for (std::size_t k = 0; k < dim; ++k) dst[k] += src[k];
        }
    });
}

template <class T>
Id<T> rmsnorm(GradTape<T>& t, Id<T> x, Id<T> gain, T eps) {
    Tensor<T> out = rmsnorm_rows(t.val(x), t.val(gain), eps);
    const Id<T> id = t.size();
    return t.node(std::move(out), [x, gain, eps, id](GradTape<T>& tp) {
        const Tensor<T>& xv = tp.val(x);
        const Tensor<T>& gv = tp.val(gain);
        const Tensor<T>& dy = tp.grad(id);
        Tensor<T>& dx = tp.grad(x);
        Tensor<T>& dg = tp.grad(gain);
        const std::size_t n = xv.last_extent();
        for (std::size_t r = 0; r < xv.row_count(); ++r) {
            const T* xr = xv.data.data() + r * n;
            const T* dyr = dy.data.data() + r * n;
            T ms = T(0);
            for (std::size_t i = 0; i < n; ++i) ms += xr[i] * xr[i];
            ms = ms / static_cast<T>(n) + eps;
            const T inv = T(1) / std::sqrt(ms);
            T dot = T(0);  // sum dy*g*x
            for (std::size_t i = 0; i < n; ++i) dot += dyr[i] * gv.data[i] * xr[i];
            const T c = dot * inv * inv * inv / static_cast<T>(n);
            T* dxr = dx.data.data() + r * n;
            for (std::size_t i = 0; i < n; ++i) {
                dxr[i] += dyr[i] * gv.data[i] * inv - xr[i] * c;
                dg.data[i] += dyr[i] * xr[i] * inv;
            }
        }
    });
}

// Layer norm over the last axis with a learnable gain (length = row width).
template <class T>
Id<T> layer_norm_rows(GradTape<T>& t, Id<T> x, Id<T> gain, T eps) {
    Tensor<T> out = attnlab::layer_norm_rows(t.val(x), t.val(gain), eps);
    const Id<T> id = t.size();
    return t.node(std::move(out), [x, gain, eps, id](GradTape<T>& tp) {
        const Tensor<T>& xv = tp.val(x);
        const Tensor<T>& gv = tp.val(gain);
        const Tensor<T>& dy = tp.grad(id);
        Tensor<T>& dx = tp.grad(x);
        Tensor<T>& dg = tp.grad(gain);
        const std::size_t n = xv.last_extent();
        const T nf = static_cast<T>(n);
        std::vector<T> xhat(n);
        for (std::size_t r = 0; r < xv.row_count(); ++r) {
            const T* xr = xv.data.data() + r * n;
            const T* dyr = dy.data.data() + r * n;
            T mean = T(0);
            for (std::size_t i = 0; i < n; ++i) mean += xr[i];
            mean /= nf;
            T var = T(0);
            for (std::size_t i = 0; i < n; ++i) {
                const T d = xr[i] - mean;
                var += d * d;
            }
            var /= nf;
            const T inv = T(1) / std::sqrt(var + eps);
            T s1 = T(0), s2 = T(0);  // mean(g*dy), mean(g*dy*xhat)
            for (std::size_t i = 0; i < n; ++i) {
                xhat[i] = (xr[i] - mean) * inv;
                const T gd = gv.data[i] * dyr[i];
                s1 += gd;
                s2 += gd * xhat[i];
            }
            s1 /= nf;
            s2 /= nf;
            T* dxr = dx.data.data() + r * n;
            for (std::size_t i = 0; i < n; ++i) {
                dxr[i] += (gv.data[i] * dyr[i] - s1 - xhat[i] * s2) * inv;
                dg.data[i] += dyr[i] * xhat[i];
            }
        }
    });
}

// out = silu(gate) * up
template <class T>
Id<T> swiglu(GradTape<T>& t, Id<T> gate, Id<T> up) {
    const Tensor<T>& a = t.val(gate);
    const Tensor<T>& b = t.val(up);
    if (!a.same_shape(b)) throw std::invalid_argument("swiglu: shape mismatch");
    Tensor<T> out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        out.data[i] = silu(a.data[i]) * b.data[i];
    const Id<T> id = t.size();
    return t.node(std::move(out), [gate, up, id](GradTape<T>& tp) {
        const Tensor<T>& a = tp.val(gate);
        const Tensor<T>& b = tp.val(up);
        const Tensor<T>& dy = tp.grad(id);
        Tensor<T>& da = tp.grad(gate);
        Tensor<T>& db = tp.grad(up);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            const T sig = T(1) / (T(1) + std::exp(-a.data[i]));
            const T s = a.data[i] * sig;
            da.data[i] += dy.data[i] * b.data[i] * (sig * (T(1) + a.data[i] * (T(1) - sig)));
            db.data[i] += dy.data[i] * s;
        }
    });
}

// [L, H*d] -> [H, L, d]
template <class T>
Id<T> split_heads(GradTape<T>& t, Id<T> x, std::size_t n_heads) {
    const Tensor<T>& xv = t.val(x);
    const std::size_t L = xv.extent(0);
    const std::size_t width = xv.extent(1);
    if (width % n_heads != 0)
        throw std::invalid_argument("split_heads: width not divisible by heads");
    const std::size_t d = width / n_heads;
    Tensor<T> out({n_heads, L, d});
    for (std::size_t h = 0; h < n_heads; ++h)
        for (std::size_t i = 0; i < L; ++i)
            std::copy_n(xv.data.data() + i * width + h * d, d,
                        out.data.data() + (h * L + i) * d);
    const Id<T> id = t.size();
    return t.node(std::move(out), [x, n_heads, L, d, width, id](GradTape<T>& tp) {
        const Tensor<T>& g = tp.grad(id);
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t h = 0; h < n_heads; ++h)
            for (std::size_t i = 0; i < L; ++i) {
                const T* src = g.data.data() + (h * L + i) * d;
                T* dst = gx.data.data() + i * width + h * d;
                for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
            }
    });
}

// [H, L, d] -> [L, H*d]
template <class T>
Id<T> merge_heads(GradTape<T>& t, Id<T> x) {
    const Tensor<T>& xv = t.val(x);
    const std::size_t H = xv.extent(0), L = xv.extent(1), d = xv.extent(2);
    Tensor<T> out({L, H * d});
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < L; ++i)
            std::copy_n(xv.data.data() + (h * L + i) * d, d,
                        out.data.data() + i * H * d + h * d);
    const Id<T> id = t.size();
    return t.node(std::move(out), [x, H, L, d, id](GradTape<T>& tp) {
        const Tensor<T>& g = tp.grad(id);
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t i = 0; i < L; ++i) {
                const T* src = g.data.data() + i * H * d + h * d;
                T* dst = gx.data.data() + (h * L + i) * d;
                for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
            }
    });
}

// Mean over positions of -log softmax(logits)[target].
template <class T>
Id<T> cross_entropy(GradTape<T>& t, Id<T> logits, const std::vector<int>& targets) {
    const Tensor<T>& lv = t.val(logits);
    const std::size_t L = lv.extent(0), V = lv.extent(1);
    if (targets.size() != L)
        throw std::invalid_argument("cross_entropy: targets length mismatch");
    // cache softmax rows for the backward pass
    auto probs = std::make_shared<Tensor<T>>(lv);
    T loss = T(0);
    for (std::size_t i = 0; i < L; ++i) {
        const int tgt = targets[i];
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= V)
            throw std::invalid_argument("cross_entropy: target out of range");
        T* row = probs->data.data() + i * V;
        const T maxv = *std::max_element(row, row + V);
        T sum = T(0);
        for (std::size_t j = 0; j < V; ++j) sum += std::exp(row[j] - maxv);
        const T logz = maxv + std::log(sum);
        loss += logz - row[tgt];
        for (std::size_t j = 0; j < V; ++j) row[j] = std::exp(row[j] - logz);
    }
    loss /= static_cast<T>(L);
    const Id<T> id = t.size();
    return t.node(Tensor<T>::from({1}, {loss}),
                  [logits, targets, probs, L, V, id](GradTape<T>& tp) {
                      const T scale = tp.grad(id).data[0] / static_cast<T>(L);
                      Tensor<T>& gl = tp.grad(logits);
                      for (std::size_t i = 0; i < L; ++i) {
                          const T* p = probs->data.data() + i * V;
                          T* g = gl.data.data() + i * V;
                          for (std::size_t j = 0; j < V; ++j) g[j] += scale * p[j];
                          g[targets[i]] -= scale;
                      }
                  });
}

}  // namespace ad

// Max over coordinates of |analytic - central difference| relative error.
template <class T>
T grad_check(const std::function<T(const Tensor<T>&)>& f,
             const Tensor<T>& analytic_grad, Tensor<T> x, T step) {
    if (!analytic_grad.same_shape(x))
        throw std::invalid_argument("grad_check: gradient shape mismatch");
    if (!std::isfinite(static_cast<double>(f(x))))
        throw std::invalid_argument("grad_check: non-finite function value");
    T worst = T(0);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const T orig = x.data[i];
        x.data[i] = orig + step;
        const T fp = f(x);
        x.data[i] = orig - step;
        const T fm = f(x);
        x.data[i] = orig;
        const T central = (fp - fm) / (T(2) * step);
        const T a = analytic_grad.data[i];
        const T denom = std::max({std::abs(a), std::abs(central), T(1e-8)});
        worst = std::max(worst, std::abs(a - central) / denom);
    }
    return worst;
}

template <class T>
T grad_check(const std::function<T(const Tensor<T>&)>& f,
             const std::function<Tensor<T>(const Tensor<T>&)>& analytic,
             const Tensor<T>& x, T step) {
    return grad_check(f, analytic(x), x, step);
}

}  // namespace attnlab
