#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bgnn/dataset.hpp"
#include "bgnn/error.hpp"
#include "bgnn/layers.hpp"
#include "bgnn/tensor.hpp"

namespace bgnn {

struct TrainConfig {
    double lr = 0.01;
    double weight_decay = 5e-4;
    int max_epochs = 500;
    int patience = 100;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// What one training run produced.
struct RunMetrics {
    std::vector<double> train_loss;          // one entry per epoch run
    std::vector<double> val_acc;             // one entry per epoch run
    double test_acc = 0.0;                   // at the best-val parameters
    double best_val = 0.0;
    int best_epoch = 0;                      // 1-based
    int epochs = 0;                          // epochs actually run
    std::vector<std::size_t> clamped_per_layer; // per Bregman layer, whole run
    double seconds = 0.0;
};

/// First and second moment estimates for Adam, one pair per parameter.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    long steps = 0;

    static AdamState for_params(const std::vector<Tensor>& params) {
        AdamState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto& p : params) {
            st.m.emplace_back(p.size(), 0.0);
            st.v.emplace_back(p.size(), 0.0);
        }
        return st;
    }
};

/// One Adam update with bias correction. Weight decay enters the gradient
/// (L2 style), not the update. A parameter whose gradient buffer was never
/// touched counts as zero gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& st, double lr,
                      double beta1, double beta2, double eps,
                      double weight_decay) {
    if (st.m.size() != params.size() || st.v.size() != params.size())
        throw ShapeError("adam_step: state holds " + std::to_string(st.m.size()) +
                         " slots for " + std::to_string(params.size()) +
                         " parameters");
    ++st.steps;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.steps));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& data = *params[p].data();
        if (st.m[p].size() != data.values.size())
            throw ShapeError("adam_step: parameter " + std::to_string(p) +
                             " changed size");
        const bool has_grad = !data.grad.empty();
        for (std::size_t i = 0; i < data.values.size(); ++i) {
            double g = (has_grad ? data.grad[i] : 0.0) + weight_decay * data.values[i];
            st.m[p][i] = beta1 * st.m[p][i] + (1.0 - beta1) * g;
            st.v[p][i] = beta2 * st.v[p][i] + (1.0 - beta2) * g * g;
            data.values[i] -=
                lr * (st.m[p][i] / bc1) / (std::sqrt(st.v[p][i] / bc2) + eps);
        }
    }
}

/// Fraction of masked rows whose argmax prediction matches the label.
inline double accuracy(const Tensor& logits, const std::vector<int>& labels,
                       const std::vector<std::uint8_t>& mask) {
    if (logits.rows() != labels.size() || logits.rows() != mask.size())
        throw ShapeError("accuracy: row counts disagree");
    auto pred = argmax_rows(logits);
    std::size_t total = 0, hit = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++total;
        if (pred[i] == static_cast<std::size_t>(labels[i])) ++hit;
    }
    if (total == 0)
        throw ConfigError("accuracy: mask selects no rows");
    return static_cast<double>(hit) / static_cast<double>(total);
}

/// Accuracy of the model on the masked nodes, dropout off.
inline double evaluate(const Model& model, const GraphDataset& ds,
                       const GraphOps& gops, const std::vector<std::uint8_t>& mask) {
    Tape tape(false);
    Tensor logits = model.forward(tape, gops, ds.features, false, nullptr);
    return accuracy(logits, ds.labels, mask);
}

inline double evaluate(const Model& model, const GraphDataset& ds,
                       const std::vector<std::uint8_t>& mask) {
    return evaluate(model, ds, GraphOps::build(ds), mask);
}

/// Trains the model in place: cross-entropy on the train mask, Adam, early
/// stopping on validation accuracy with the given patience, parameters of
/// the best validation epoch restored at the end. Fully deterministic for a
/// fixed seed. Aborts with a diagnostic when the loss leaves the reals.
inline RunMetrics fit(Model& model, const GraphDataset& ds, const GraphOps& gops,
                      const TrainConfig& cfg, std::uint64_t seed) {
    if (cfg.lr < 0.0)
        throw ConfigError("fit: negative learning rate");
    if (cfg.max_epochs < 1)
        throw ConfigError("fit: max_epochs must be at least 1");
    if (cfg.patience < 1 || cfg.patience > cfg.max_epochs)
        throw ConfigError("fit: patience must lie in [1, max_epochs]");

    const auto t0 = std::chrono::steady_clock::now();
    Rng dropout_rng(seed);
    auto params = model.parameters();
    AdamState st = AdamState::for_params(params);

    RunMetrics metrics;
    std::vector<ClampStats> clamp_stats(model.breg.size());
    std::vector<std::vector<double>> best_params;
    double best_val = -1.0;
    int since_best = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (auto& p : params) p.zero_grad();
        Tape tape;
        Tensor logits =
            model.forward(tape, gops, ds.features, true, &dropout_rng, &clamp_stats);
        Tensor loss = cross_entropy(tape, logits, ds.labels, ds.train_mask);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
            std::string counts;
            for (const auto& s : clamp_stats) {
                if (!counts.empty()) counts += ", ";
                counts += std::to_string(s.clamped);
            }
            throw TrainingError("fit: non-finite loss at epoch " +
                                std::to_string(epoch) +
                                " (clamped entries per Bregman layer: [" + counts +
                                "])");
        }
        tape.backward(loss);
        adam_step(params, st, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                  cfg.weight_decay);

        const double val = evaluate(model, ds, gops, ds.val_mask);
        metrics.train_loss.push_back(loss_value);
        metrics.val_acc.push_back(val);
        metrics.epochs = epoch;
        if (val > best_val) {
            best_val = val;
            metrics.best_epoch = epoch;
            since_best = 0;
            best_params.clear();
            for (const auto& p : params) best_params.push_back(p.values());
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    for (std::size_t p = 0; p < params.size(); ++p)
        params[p].values() = best_params[p];
    metrics.best_val = best_val;
    metrics.test_acc = evaluate(model, ds, gops, ds.test_mask);
    for (const auto& s : clamp_stats)
        metrics.clamped_per_layer.push_back(s.clamped);
    metrics.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

inline RunMetrics fit(Model& model, const GraphDataset& ds, const TrainConfig& cfg,
                      std::uint64_t seed) {
    return fit(model, ds, GraphOps::build(ds), cfg, seed);
}

struct SeedRun {
    std::uint64_t seed = 0;
    RunMetrics metrics;
};

struct MultiSeedResult {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation, n - 1 denominator
    std::vector<SeedRun> runs;
};

/// Runs builder(seed) + fit for every configured seed and aggregates the
/// test accuracies as mean and sample standard deviation. When `on_trained`
/// is provided it sees each model in its restored best-epoch state, right
/// after that seed's metrics were recorded.
template <class Builder>
inline MultiSeedResult multi_seed(
    Builder&& builder, const GraphDataset& ds, const TrainConfig& cfg,
    const std::function<void(Model&, const SeedRun&)>& on_trained = nullptr) {
    if (cfg.seeds.size() < 2)
        throw ConfigError("multi_seed: need at least 2 seeds");
    const GraphOps gops = GraphOps::build(ds);
    MultiSeedResult result;
    for (std::uint64_t seed : cfg.seeds) {
        Model model = builder(seed);
        RunMetrics metrics = fit(model, ds, gops, cfg, seed);
        result.mean += metrics.test_acc;
        result.runs.push_back({seed, std::move(metrics)});
        if (on_trained)
            on_trained(model, result.runs.back());
    }
    const double n = static_cast<double>(result.runs.size());
    result.mean /= n;
    double ss = 0.0;
    for (const auto& run : result.runs) {
        const double delta = run.metrics.test_acc - result.mean;
        ss += delta * delta;
    }
    result.stddev = std::sqrt(ss / (n - 1.0));
    return result;
}

} // namespace bgnn
