#pragma once

// First-order episodic meta-training.
//
// Per iteration: sample n tasks; for each task adapt phi on an augmented batch of
// its train split (one SGD step with inner_lr), then take the gradient of the
// objective at the adapted parameters on an augmented batch of its test split.
// phi then moves by -outer_lr times the mean of those test-stage gradients.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "metadefa/augment.hpp"
#include "metadefa/losses.hpp"
#include "metadefa/model.hpp"
#include "metadefa/ops.hpp"
#include "metadefa/rng.hpp"
#include "metadefa/tensor.hpp"

namespace metadefa {

/// Anything that can score (original, augmented) batches and classify single images.
template <class M>
concept MetaLearner = requires(const M& m, const ParamSet& p, std::span<const LabeledImage> batch,
                               const LossWeights& w, ParamSet& grads, const Tensor& image, Rng& rng) {
    { m.init(rng) } -> std::same_as<ParamSet>;
    { m.batch_objective(p, batch, batch, w, grads) } -> std::same_as<LossBreakdown>;
    { m.predict(p, image) } -> std::convertible_to<std::size_t>;
};

/// TinyCnn under the full alignment objective.
class CnnLearner {
public:
    explicit CnnLearner(TinyCnnConfig config) : net_(std::move(config)) {}

    const TinyCnn& net() const noexcept { return net_; }

    ParamSet init(Rng& rng) const { return net_.init(rng); }

    /// Batch-mean objective over aligned (original, augmented) pairs. Overwrites `grads`
    /// with the gradient of that mean w.r.t. `params`.
    LossBreakdown batch_objective(const ParamSet& params, std::span<const LabeledImage> ori,
                                  std::span<const LabeledImage> aug, const LossWeights& w, ParamSet& grads) const {
        if (ori.size() != aug.size() || ori.empty()) {
            throw std::invalid_argument("batch_objective: need equally sized, non-empty batches");
        }
        net_.check_params(params);
        grads = params.zeros_like();
        LossBreakdown sum;
        for (std::size_t i = 0; i < ori.size(); ++i) {
            if (ori[i].label != aug[i].label) throw std::invalid_argument("batch_objective: views disagree on label");
            const auto t_ori = net_.forward_trace(params, ori[i].pixels, ori[i].label);
            const auto t_aug = net_.forward_trace(params, aug[i].pixels, aug[i].label);
            const ObjectiveResult r = evaluate_objective(t_ori.bundle, t_aug.bundle, ori[i].label, w);
            sum += r.loss;
            net_.backward(params, t_ori, r.grad_ori, grads);
            net_.backward(params, t_aug, r.grad_aug, grads);
        }
        grads.scale(1.0 / static_cast<double>(ori.size()));
        return sum.averaged(ori.size(), w);
    }

    std::size_t predict(const ParamSet& params, const Tensor& image) const { return net_.predict(params, image); }

private:
    TinyCnn net_;
};

struct MetaConfig {
    double inner_lr = 4e-3;
    double outer_lr = 0.3;
    std::size_t tasks_per_iteration = 2;
    std::size_t pool_size = 8;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    /// Meta-iterations per epoch; 0 means pool_size / tasks_per_iteration.
    std::size_t iterations_per_epoch = 40;
    double train_fraction = 0.8;
    /// Share of the source held out for per-epoch validation accuracy.
    double val_fraction = 0.2;
    /// Leading epochs trained on cross-entropy alone (lambda1 = lambda2 = 0).
    std::size_t warmup_epochs = 0;

    std::size_t effective_iterations() const {
        return iterations_per_epoch != 0 ? iterations_per_epoch : pool_size / tasks_per_iteration;
    }

    void validate() const {
        if (!(inner_lr >= 0.0) || !(outer_lr >= 0.0)) throw std::invalid_argument("MetaConfig: learning rates must be >= 0");
        if (tasks_per_iteration == 0) throw std::invalid_argument("MetaConfig: tasks_per_iteration must be >= 1");
        if (pool_size < tasks_per_iteration) throw std::invalid_argument("MetaConfig: pool_size must be >= tasks_per_iteration");
        if (batch_size == 0) throw std::invalid_argument("MetaConfig: batch_size must be >= 1");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
            throw std::invalid_argument("MetaConfig: train_fraction must be in (0, 1)");
        }
        if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("MetaConfig: val_fraction must be in [0, 1)");
    }
};

struct Task {
    std::vector<LabeledImage> train_split;
    std::vector<LabeledImage> test_split;
};

namespace detail {

inline std::size_t distinct_labels(const std::vector<LabeledImage>& v) {
    std::set<std::size_t> s;
    for (const auto& x : v) s.insert(x.label);
    return s.size();
}

inline std::vector<LabeledImage> sample_batch(const std::vector<LabeledImage>& split, std::size_t batch_size, Rng& rng) {
    if (split.size() <= batch_size) return split;
    std::vector<std::size_t> idx(split.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(batch_size);
    std::sort(idx.begin(), idx.end());
    std::vector<LabeledImage> out;
    out.reserve(batch_size);
    for (std::size_t i : idx) out.push_back(split[i]);
    return out;
}

}  // namespace detail

/// Checks the Task invariants: disjoint sample ids, both splits non-empty with >= 2 classes.
inline void validate_task(const Task& task) {
    if (task.train_split.empty() || task.test_split.empty()) throw std::invalid_argument("Task: empty split");
    if (detail::distinct_labels(task.train_split) < 2 || detail::distinct_labels(task.test_split) < 2) {
        throw std::invalid_argument("Task: each split needs at least 2 classes");
    }
    std::set<std::size_t> ids;
    for (const auto& s : task.train_split) ids.insert(s.id);
    for (const auto& s : task.test_split)
        if (ids.count(s.id)) throw std::invalid_argument("Task: sample " + std::to_string(s.id) + " in both splits");
}

/// pool_size tasks, each a fresh shuffle of `source` split train_fraction / rest.
/// A shuffle whose splits lack two classes is redrawn.
inline std::vector<Task> build_task_pool(const std::vector<LabeledImage>& source, const MetaConfig& config, Rng& rng) {
    config.validate();
    if (detail::distinct_labels(source) < 2) throw std::invalid_argument("build_task_pool: source needs at least 2 classes");
    const auto n_train = static_cast<std::size_t>(std::lround(config.train_fraction * static_cast<double>(source.size())));
    if (n_train < 2 || source.size() - n_train < 2) {
        throw std::invalid_argument("build_task_pool: " + std::to_string(source.size()) +
                                    " samples are too few for two splits of at least 2");
    }
    constexpr int kMaxAttempts = 1000;
    std::vector<Task> pool;
    pool.reserve(config.pool_size);
    std::vector<std::size_t> order(source.size());
    for (std::size_t t = 0; t < config.pool_size; ++t) {
        Task task;
        int attempt = 0;
        for (;; ++attempt) {
            if (attempt == kMaxAttempts) {
                throw std::invalid_argument("build_task_pool: could not draw splits with 2 classes each");
            }
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            rng.shuffle(order);
            task.train_split.clear();
            task.test_split.clear();
            for (std::size_t i = 0; i < order.size(); ++i)
                (i < n_train ? task.train_split : task.test_split).push_back(source[order[i]]);
            if (detail::distinct_labels(task.train_split) >= 2 && detail::distinct_labels(task.test_split) >= 2) break;
        }
        pool.push_back(std::move(task));
    }
    return pool;
}

struct StepResult {
    ParamSet params;  // adapted parameters (meta-train) or gradients (meta-test)
    LossBreakdown loss;
};

namespace detail {

template <MetaLearner L>
StepResult split_gradient(const L& learner, const ParamSet& params, const std::vector<LabeledImage>& split,
                          const MetaConfig& config, const LossWeights& weights, const CorruptionConfig& corruption,
                          Rng& rng) {
    const std::vector<LabeledImage> batch = sample_batch(split, config.batch_size, rng);
    const std::vector<LabeledImage> aug = enhance_batch(batch, split, corruption, rng);
    StepResult r;
    r.loss = learner.batch_objective(params, batch, aug, weights, r.params);
    return r;
}

}  // namespace detail

/// Meta-train stage: returns theta = phi - inner_lr * grad_phi L(train split) and that loss.
template <MetaLearner L>
StepResult meta_train_step(const L& learner, const ParamSet& phi, const Task& task, const MetaConfig& config,
                           const LossWeights& weights, const CorruptionConfig& corruption, Rng& rng) {
    StepResult g = detail::split_gradient(learner, phi, task.train_split, config, weights, corruption, rng);
    return {sgd_step(phi, g.params, config.inner_lr), g.loss};
}

/// Meta-test stage: gradient of the test-split objective w.r.t. the adapted parameters.
template <MetaLearner L>
StepResult meta_test_grads(const L& learner, const ParamSet& adapted, const Task& task, const MetaConfig& config,
                           const LossWeights& weights, const CorruptionConfig& corruption, Rng& rng) {
    return detail::split_gradient(learner, adapted, task.test_split, config, weights, corruption, rng);
}

/// phi - outer_lr * mean(all_grads), reduced in the given order.
inline ParamSet outer_update(const ParamSet& phi, const std::vector<ParamSet>& all_grads, const MetaConfig& config) {
    if (all_grads.empty()) throw std::invalid_argument("outer_update: no task gradients");
    ParamSet mean = phi.zeros_like();
    for (const ParamSet& g : all_grads) mean.axpy(1.0, g);
    mean.scale(1.0 / static_cast<double>(all_grads.size()));
    return sgd_step(phi, mean, config.outer_lr);
}

struct EpochRecord {
    std::size_t epoch = 0;
    LossBreakdown loss;  // mean meta-train loss over the epoch's tasks
    double val_accuracy = 0.0;
};

struct TrainResult {
    ParamSet initial;
    ParamSet final;
    std::vector<EpochRecord> history;
};

template <MetaLearner L>
double accuracy(const L& learner, const ParamSet& params, std::span<const LabeledImage> samples) {
    if (samples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& s : samples) hits += learner.predict(params, s.pixels) == s.label ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

/// Holds out val_fraction of the source (seeded), returning {train, validation}.
inline std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> split_validation(
    const std::vector<LabeledImage>& source, double val_fraction, std::uint64_t seed) {
    std::vector<std::size_t> order(source.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, 1));
    rng.shuffle(order);
    const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(source.size())));
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> out;
    for (std::size_t i : train_idx) out.first.push_back(source[i]);
    for (std::size_t i : val_idx) out.second.push_back(source[i]);
    return out;
}

using EpochCallback = std::function<void(const EpochRecord&, const ParamSet&)>;

/// Full training run. With val_fraction == 0 the validation accuracy is measured on the whole source.
template <MetaLearner L>
TrainResult train(const L& learner, const std::vector<LabeledImage>& source, const MetaConfig& config,
                  const LossWeights& weights, const CorruptionConfig& corruption, const EpochCallback& on_epoch = {}) {
    config.validate();
    weights.validate();
    corruption.validate();
    Rng init_rng(derive_seed(config.seed, 0));
    TrainResult result;
    result.initial = learner.init(init_rng);
    ParamSet phi = result.initial;

    auto [train_set, val_set] = split_validation(source, config.val_fraction, config.seed);
    const std::vector<LabeledImage>& val_eval = val_set.empty() ? train_set : val_set;

    const std::size_t n = config.tasks_per_iteration;
    const std::size_t iterations = config.effective_iterations();
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(config.seed, 1000 + epoch);
        LossWeights w = weights;
        if (epoch < config.warmup_epochs) w.lambda1 = w.lambda2 = 0.0;
        Rng pool_rng(derive_seed(epoch_seed, 0));
        const std::vector<Task> pool = build_task_pool(train_set, config, pool_rng);
        Rng order_rng(derive_seed(epoch_seed, 1));
        std::vector<std::size_t> order;

        LossBreakdown epoch_loss;
        std::size_t tasks_seen = 0;
        for (std::size_t it = 0; it < iterations; ++it) {
            std::vector<ParamSet> task_grads;
            task_grads.reserve(n);
            for (std::size_t j = 0; j < n; ++j) {
                // without replacement until the pool is exhausted, then reshuffle
                if (order.empty()) {
                    order.resize(pool.size());
                    for (std::size_t i = 0; i < order.size(); ++i) order[i] = pool.size() - 1 - i;
                    order_rng.shuffle(order);
                }
                const Task& task = pool[order.back()];
                order.pop_back();
                Rng task_rng(derive_seed(epoch_seed, 2 + it * n + j));
                Rng train_rng = task_rng.substream(0);
                Rng test_rng = task_rng.substream(1);
                StepResult adapted = meta_train_step(learner, phi, task, config, w, corruption, train_rng);
                StepResult test = meta_test_grads(learner, adapted.params, task, config, w, corruption, test_rng);
                epoch_loss += adapted.loss;
                ++tasks_seen;
                task_grads.push_back(std::move(test.params));
            }
            phi = outer_update(phi, task_grads, config);
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.loss = tasks_seen ? epoch_loss.averaged(tasks_seen, w) : LossBreakdown{};
        rec.val_accuracy = accuracy(learner, phi, std::span<const LabeledImage>(val_eval));
        if (on_epoch) on_epoch(rec, phi);
        result.history.push_back(rec);
    }
    result.final = std::move(phi);
    return result;
}

}  // namespace metadefa
