#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "attnlab/model.hpp"

namespace attnlab {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double eps = 1e-8;
};

struct TrainConfig {
    double peak_lr = 1e-3;
    double end_lr = 1e-4;
    std::size_t warmup_steps = 50;
    std::size_t total_steps = 500;
    std::size_t batch_tokens = 1024;
    std::size_t short_len = 256;
    std::size_t long_len = 256;
    std::pair<std::size_t, std::size_t> interleave_ratio{1, 0};  // short : long
    std::uint64_t seed = 1;
    AdamWConfig optimizer;

    void validate() const {
        if (end_lr > peak_lr)
            throw std::invalid_argument("train config: end_lr must be <= peak_lr");
        if (warmup_steps >= total_steps)
            throw std::invalid_argument("train config: warmup_steps must be < total_steps");
        if (interleave_ratio.first + interleave_ratio.second == 0)
            throw std::invalid_argument("train config: interleave ratio sums to zero");
        if (batch_tokens == 0 || short_len == 0 || long_len == 0)
            throw std::invalid_argument("train config: zero-sized field");
    }
};

// Linear warmup to peak_lr, then cosine decay to end_lr at total_steps.
inline double lr_schedule(std::size_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps)
        throw std::invalid_argument("lr_schedule: step out of range");
    if (step <= cfg.warmup_steps) {
        if (cfg.warmup_steps == 0) return cfg.peak_lr;
        return cfg.peak_lr * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_steps);
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.end_lr + (cfg.peak_lr - cfg.end_lr) *
                            (1.0 + std::cos(3.14159265358979323846 * progress)) / 2.0;
}

// Mean over positions of -log softmax(logits)[target].
template <class T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
    const std::size_t L = logits.extent(0), V = logits.extent(1);
    if (targets.size() != L)
        throw std::invalid_argument("cross_entropy: targets length mismatch");
    T loss = T(0);
    for (std::size_t i = 0; i < L; ++i) {
        const T* row = logits.data.data() + i * V;
        const T maxv = *std::max_element(row, row + V);
        T sum = T(0);
        for (std::size_t j = 0; j < V; ++j) sum += std::exp(row[j] - maxv);
        loss += maxv + std::log(sum) - row[targets[i]];
    }
    return loss / static_cast<T>(L);
}

enum class BatchKind { Short, Long };

// Deterministic repeating pattern honoring the ratio, e.g. 3:1 -> S,S,S,L.
// A pure function of (ratio, step); the seed parameter is part of the
// contract so future stochastic schedules stay reproducible.
inline BatchKind interleave_kind(std::size_t step,
                                 std::pair<std::size_t, std::size_t> ratio,
                                 std::uint64_t /*seed*/ = 0) {
    const std::size_t total = ratio.first + ratio.second;
    if (total == 0) throw std::invalid_argument("interleave: ratio sums to zero");
    if (ratio.first == 0) return BatchKind::Long;
    if (ratio.second == 0) return BatchKind::Short;
    return (step % total) < ratio.first ? BatchKind::Short : BatchKind::Long;
}

template <class Batch>
std::vector<Batch> interleave_batches(const std::function<Batch()>& short_stream,
                                      const std::function<Batch()>& long_stream,
                                      std::pair<std::size_t, std::size_t> ratio,
                                      std::uint64_t seed, std::size_t n_batches) {
    if (ratio.first + ratio.second == 0)
        throw std::invalid_argument("interleave_batches: ratio sums to zero");
    if ((ratio.first > 0 && !short_stream) || (ratio.second > 0 && !long_stream))
        throw std::invalid_argument("interleave_batches: missing stream for nonzero ratio");
    std::vector<Batch> out;
    out.reserve(n_batches);
    for (std::size_t s = 0; s < n_batches; ++s)
        out.push_back(interleave_kind(s, ratio, seed) == BatchKind::Short
                          ? short_stream()
                          : long_stream());
    return out;
}

// Decoupled weight decay; decay applies to matrices only (norm gains and
// other vectors are excluded).
template <class T>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
              double lr) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->shape);
                v_.emplace_back(p->shape);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Tensor<T>& p = *params[pi];
            const Tensor<T>& g = grads[pi];
            const bool decay = p.rank() >= 2;
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                const double gi = static_cast<double>(g.data[i]);
                double m = static_cast<double>(m_[pi].data[i]);
                double v = static_cast<double>(v_[pi].data[i]);
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gi;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gi * gi;
                m_[pi].data[i] = static_cast<T>(m);
                v_[pi].data[i] = static_cast<T>(v);
                double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
                if (decay) update += cfg_.weight_decay * static_cast<double>(p.data[i]);
                p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) - lr * update);
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    std::size_t t_ = 0;
};

struct MetricsRow {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    std::size_t tokens_seen = 0;
};

struct TrainResult {
    std::vector<MetricsRow> metrics;
};

// Produces the token sequences for one step: (step, index within batch, len).
using SequenceFn =
    std::function<std::vector<int>(std::size_t step, std::size_t idx, std::size_t len)>;

// Runs total_steps AdamW updates with next-token cross-entropy over every
// position. Deterministic given seed and thread count: per-sequence gradients
// are reduced in a fixed order regardless of scheduling.
template <class T>
TrainResult train(Model<T>& model, const SequenceFn& data, const TrainConfig& cfg,
                  std::size_t n_threads = 1, std::size_t step_offset = 0,
                  std::size_t tokens_offset = 0) {
    cfg.validate();
    TrainResult result;
    AdamW<T> opt(cfg.optimizer);

    std::vector<Tensor<T>*> params;
    for_each_param(model.weights, [&](const std::string&, Tensor<T>& t) {
        params.push_back(&t);
    });

    // rope caches must exist before worker threads share the model
    const std::size_t max_len = std::max(cfg.short_len, cfg.long_len);
    for (const auto& spec : model.pattern.layers)
        if (spec.positional == Positional::rope) model.rope_cache(spec.theta, max_len);

    std::size_t tokens_seen = tokens_offset;
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        const BatchKind kind = interleave_kind(step, cfg.interleave_ratio, cfg.seed);
        const std::size_t len = kind == BatchKind::Short ? cfg.short_len : cfg.long_len;
        const std::size_t n_seqs = std::max<std::size_t>(1, cfg.batch_tokens / len);

        std::vector<std::vector<int>> seqs(n_seqs);
        for (std::size_t b = 0; b < n_seqs; ++b) seqs[b] = data(step + step_offset, b, len);

        // per-sequence losses/grads, merged in sequence order
        std::vector<double> losses(n_seqs, 0.0);
        std::vector<std::vector<Tensor<T>>> grads(n_seqs);
        const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(n_threads, 1), n_seqs);
        auto work = [&](std::size_t w) {
            for (std::size_t b = w; b < n_seqs; b += workers) {
                GradTape<T> tape;
                auto ids = model.push_params(tape);
                std::vector<int> inputs(seqs[b].begin(), seqs[b].end() - 1);
                std::vector<int> targets(seqs[b].begin() + 1, seqs[b].end());
                auto logits = model.forward_on_tape(tape, ids, inputs, true);
                auto loss = ad::cross_entropy(tape, logits, targets);
                tape.backward(loss);
                losses[b] = static_cast<double>(tape.val(loss).data[0]);
                grads[b].reserve(ids.ids.size());
                for (auto id : ids.ids) grads[b].push_back(tape.grad(id));
            }
        };
        if (workers <= 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
            for (auto& th : pool) th.join();
        }

        std::vector<Tensor<T>> grad_sum = std::move(grads[0]);
        for (std::size_t b = 1; b < n_seqs; ++b)
            for (std::size_t pi = 0; pi < grad_sum.size(); ++pi)
                for (std::size_t i = 0; i < grad_sum[pi].data.size(); ++i)
                    grad_sum[pi].data[i] += grads[b][pi].data[i];
        const T inv = T(1) / static_cast<T>(n_seqs);
        for (auto& g : grad_sum)
            for (auto& x : g.data) x *= inv;

        double loss = 0.0;
        for (double l : losses) loss += l;
        loss /= static_cast<double>(n_seqs);
        if (!std::isfinite(loss))
            throw std::runtime_error("train: non-finite loss at step " +
                                     std::to_string(step + step_offset));

        const double lr = lr_schedule(step, cfg);
        opt.step(params, grad_sum, lr);

        tokens_seen += n_seqs * len;
        result.metrics.push_back(MetricsRow{step + step_offset, lr, loss, tokens_seen});
    }
    return result;
}

}  // namespace attnlab
