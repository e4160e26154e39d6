#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cak/dataset.hpp"
#include "cak/error.hpp"
#include "cak/network.hpp"
#include "cak/ops.hpp"
#include "cak/rng.hpp"

namespace cak {

struct TrainConfig {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t epochs = 12;
    std::size_t batch = 32;
    double lr_factor = 0.1;
    std::vector<std::size_t> milestones{6, 10}; // lr *= lr_factor when epoch reaches each
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr >= 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0) || !(lr_factor >= 0.0))
            throw ConfigError("train: coefficients must be >= 0");
        if (batch == 0) throw ConfigError("train: batch size must be positive");
    }

    /// Learning rate in effect during 0-based `epoch`.
    double lr_at(std::size_t epoch) const {
        double v = lr;
        for (std::size_t m : milestones)
            if (epoch >= m) v *= lr_factor;
        return v;
    }
};

/// Milestones every `period` epochs below `epochs`.
inline std::vector<std::size_t> step_milestones(std::size_t period, std::size_t epochs) {
    std::vector<std::size_t> out;
    if (period == 0) return out;
    for (std::size_t e = period; e < epochs; e += period) out.push_back(e);
    return out;
}

// SGD with momentum and L2 weight decay folded into the gradient:
//   v <- momentum * v + (g + wd * p),  p <- p - lr * v
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    /// `grads` is aligned with net.params(); buffer entries are ignored.
    void step(Network& net, const std::vector<Tensor>& grads, double lr) {
        auto& params = net.params();
        if (grads.size() != params.size()) throw ShapeError("sgd: gradient count mismatch");
        if (velocity_.empty())
            for (const auto& p : params) velocity_.push_back(Tensor::zeros_like(p.value));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].learnable()) continue;
            Tensor& p = params[i].value;
            Tensor& v = velocity_[i];
            const Tensor& g = grads[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                v[j] = momentum_ * v[j] + (g[j] + weight_decay_ * p[j]);
                p[j] -= lr * v[j];
            }
        }
    }

private:
    double momentum_;
    double weight_decay_;
    std::vector<Tensor> velocity_;
};

struct EvalMetrics {
    std::size_t count = 0;
    double loss = 0.0;
    double top1 = 0.0; // percent
    double top5 = 0.0; // percent; only meaningful when has_top5
    bool has_top5 = false;
};

namespace detail {

inline double sample_loss(const double* row, std::size_t K, int label) {
    const double mx = *std::max_element(row, row + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
    return std::log(denom) - (row[label] - mx);
}

/// Rank of the true label: number of classes with a strictly larger logit.
/// Ties are broken towards the lower class index.
inline std::size_t label_rank(const double* row, std::size_t K, int label) {
    std::size_t rank = 0;
    for (std::size_t k = 0; k < K; ++k)
        if (row[k] > row[label] || (row[k] == row[label] && static_cast<int>(k) < label)) ++rank;
    return rank;
}

} // namespace detail

/// Loss and top-k accuracy (in percent) from logits[N,K].
inline EvalMetrics score_logits(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    if (N == 0) throw Error("cannot evaluate an empty dataset");
    EvalMetrics m;
    m.count = N;
    m.has_top5 = K >= 5;
    std::size_t hit1 = 0, hit5 = 0;
    double loss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const double* row = &logits[n * K];
        loss += detail::sample_loss(row, K, labels[n]);
        const std::size_t rank = detail::label_rank(row, K, labels[n]);
        hit1 += rank < 1;
        hit5 += rank < 5;
    }
    m.loss = loss / static_cast<double>(N);
    m.top1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(N);
    m.top5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(N);
    return m;
}

/// Logits for the whole dataset, computed in batches.
inline Tensor predict(const Network& net, const Dataset& ds, std::size_t batch = 100) {
    ds.validate();
    const std::size_t N = ds.size();
    Tensor out(Shape{N, net.spec().num_classes});
    for (std::size_t start = 0; start < N; start += batch) {
        std::vector<std::size_t> idx(std::min(batch, N - start));
        std::iota(idx.begin(), idx.end(), start);
        const Tensor z = net.logits(ds.subset(idx).images);
        std::copy(z.data().begin(), z.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * z.dim(1)));
    }
    return out;
}

inline EvalMetrics evaluate(const Network& net, const Dataset& ds) {
    if (ds.empty()) throw Error("cannot evaluate an empty dataset");
    return score_logits(predict(net, ds), ds.labels);
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_top1 = 0.0;
    bool has_val = false;
    EvalMetrics val;
};

struct TrainReport {
    std::vector<EpochMetrics> epochs;

    const EpochMetrics& last() const {
        if (epochs.empty()) throw Error("train report is empty");
        return epochs.back();
    }
};

inline std::string to_csv(const TrainReport& report) {
    std::ostringstream os;
    os << "epoch,lr,train_loss,train_top1,val_loss,val_top1,val_top5\n";
    char buf[256];
    for (const auto& e : report.epochs) {
        if (e.has_val)
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch + 1, e.lr, e.train_loss,
                          e.train_top1, e.val.loss, e.val.top1, e.val.top5);
        else
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,,,\n", e.epoch + 1, e.lr, e.train_loss, e.train_top1);
        os << buf;
    }
    return os.str();
}

/// Mini-batch SGD. Input standardization is fitted on `train_set` first.
/// Each epoch visits a seed-determined permutation; the reported train loss
/// is the mean per-sample loss summed in sample-index order, so it does not
/// depend on the visiting order. Throws NumericalError on a non-finite loss.
inline TrainReport train(Network& net, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    train_set.validate();
    if (train_set.empty()) throw Error("cannot train on an empty dataset");
    if (train_set.num_classes != net.spec().num_classes)
        throw ConfigError("dataset has " + std::to_string(train_set.num_classes) + " classes, network expects " +
                          std::to_string(net.spec().num_classes));
    net.set_input_normalization(channel_stats(train_set.images));

    const std::size_t N = train_set.size();
    const std::size_t K = net.spec().num_classes;
    Sgd sgd(cfg.momentum, cfg.weight_decay);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(N);
    std::vector<double> sample_loss(N);
    TrainReport report;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        std::size_t hits = 0;
        for (std::size_t start = 0, step = 0; start < N; start += cfg.batch, ++step) {
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(N, start + cfg.batch)));
            const Dataset batch = train_set.subset(idx);
            Tape tape;
            const auto pass = net.forward(tape, batch.images, true);
            const Var loss = softmax_cross_entropy(pass.logits, batch.labels);
            if (!std::isfinite(loss.value()[0]))
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                                     std::to_string(step + 1));
            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(pass.vars.size());
            for (const Var& v : pass.vars) grads.push_back(tape.grad(v));
            const Tensor& z = pass.logits.value();
            for (std::size_t b = 0; b < idx.size(); ++b) {
                sample_loss[idx[b]] = detail::sample_loss(&z[b * K], K, batch.labels[b]);
                hits += detail::label_rank(&z[b * K], K, batch.labels[b]) == 0;
            }
            sgd.step(net, grads, lr);
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.train_loss = std::accumulate(sample_loss.begin(), sample_loss.end(), 0.0) / static_cast<double>(N);
        m.train_top1 = 100.0 * static_cast<double>(hits) / static_cast<double>(N);
        if (!std::isfinite(m.train_loss))
            throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch + 1));
        if (val_set && !val_set->empty()) {
            m.has_val = true;
            m.val = evaluate(net, *val_set);
        }
        report.epochs.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return report;
}

} // namespace cak
