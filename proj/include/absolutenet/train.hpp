#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "absolutenet/data.hpp"
#include "absolutenet/model.hpp"
#include "absolutenet/ops.hpp"
#include "absolutenet/rng.hpp"

namespace absnet {

struct TrainConfig {
    double learning_rate = 9e-4;
    int epochs_select = 200;   // checkpoint-selection phase
    int epochs_retrain = 100;  // continuation on train+val
    int batch_size = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 42;

    void validate() const {
        if (learning_rate <= 0) throw std::invalid_argument("train: learning_rate must be > 0");
        if (epochs_select < 1 || epochs_retrain < 0)
            throw std::invalid_argument("train: epoch counts invalid");
        if (batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
    }
};

/// Standard Adam with bias correction; one moment pair per parameter tensor.
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::int64_t step = 0;
};

template <typename T>
void adam_step(const std::vector<Param<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, const TrainConfig& cfg) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam: " + std::to_string(params.size()) + " params vs " +
                                    std::to_string(grads.size()) + " grads");
    if (state.m.empty()) {
        for (auto* p : params) {
            state.m.push_back(Tensor<T>::zeros(p->value.shape()));
            state.v.push_back(Tensor<T>::zeros(p->value.shape()));
        }
    }
    ++state.step;
    const T b1 = static_cast<T>(cfg.adam_beta1);
    const T b2 = static_cast<T>(cfg.adam_beta2);
    const T eps = static_cast<T>(cfg.adam_eps);
    const T corr1 = T{1} - static_cast<T>(std::pow(cfg.adam_beta1, state.step));
    const T corr2 = T{1} - static_cast<T>(std::pow(cfg.adam_beta2, state.step));
    const T lr = static_cast<T>(cfg.learning_rate);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->value;
        const auto& g = grads[i];
        if (!same_shape(p.shape(), g.shape()))
            throw std::invalid_argument("adam: gradient shape " + shape_str(g.shape()) +
                                        " does not match parameter " + shape_str(p.shape()));
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::int64_t e = 0; e < p.size(); ++e) {
            m[e] = b1 * m[e] + (T{1} - b1) * g[e];
            v[e] = b2 * v[e] + (T{1} - b2) * g[e] * g[e];
            const T mhat = m[e] / corr1;
            const T vhat = v[e] / corr2;
            p[e] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

/// Confusion counts and the derived rates; the deviant class (label 1) is
/// positive.
struct Metrics {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0, sensitivity = 0, specificity = 0;

    static Metrics from_counts(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                               std::int64_t fn) {
        Metrics m;
        m.tp = tp;
        m.fp = fp;
        m.tn = tn;
        m.fn = fn;
        const std::int64_t total = tp + fp + tn + fn;
        m.accuracy = total ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
        m.sensitivity = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        m.specificity = (tn + fp) ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
        return m;
    }
};

struct EpochStats {
    int epoch = 0;
    std::string phase;  // "select" or "retrain"
    double train_loss = 0, train_acc = 0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double val_acc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int selected_epoch = -1;  // argmin validation loss in the select phase
    double best_val_loss = std::numeric_limits<double>::infinity();
    Metrics test;
    double wall_seconds = 0;
    std::uint64_t seed = 0;
    TrainConfig config;
    std::vector<std::int64_t> touched_indices;  // sorted trials seen by gradient updates
};

/// fold index plus disjoint train (60%), val (20%), test (20%) trial indices.
struct FoldSplit {
    int fold = 0;
    std::vector<std::int64_t> train;
    std::vector<std::int64_t> val;
    std::vector<std::int64_t> test;
};

/// Class-stratified k-fold split: per class the shuffled indices are cut into
/// k test chunks; the remainder splits 3:1 into train/val (60/20/20 overall).
inline std::vector<FoldSplit> stratified_folds(const std::vector<std::uint8_t>& labels, int k,
                                               Rng rng) {
    if (k < 2) throw std::invalid_argument("folds: k must be >= 2");
    std::vector<std::vector<std::int64_t>> by_class(2);
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i] ? 1 : 0].push_back(static_cast<std::int64_t>(i));
    for (auto& v : by_class)
        if (static_cast<int>(v.size()) < k)
            throw std::invalid_argument("folds: a class has fewer than k trials");
    for (auto& v : by_class) rng.shuffle(v.begin(), v.end());

    std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        auto& fold = folds[static_cast<std::size_t>(f)];
        fold.fold = f;
        for (const auto& v : by_class) {
            const std::int64_t n = static_cast<std::int64_t>(v.size());
            const std::int64_t lo = f * n / k, hi = (f + 1) * n / k;
            std::vector<std::int64_t> rest;
            for (std::int64_t i = 0; i < n; ++i) {
                if (i >= lo && i < hi)
                    fold.test.push_back(v[static_cast<std::size_t>(i)]);
                else
                    rest.push_back(v[static_cast<std::size_t>(i)]);
            }
            const std::int64_t n_val = static_cast<std::int64_t>(rest.size()) / 4;  // 20 of 80
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(rest.size()); ++i) {
                if (i < n_val)
                    fold.val.push_back(rest[static_cast<std::size_t>(i)]);
                else
                    fold.train.push_back(rest[static_cast<std::size_t>(i)]);
            }
        }
        std::sort(fold.train.begin(), fold.train.end());
        std::sort(fold.val.begin(), fold.val.end());
        std::sort(fold.test.begin(), fold.test.end());
    }
    return folds;
}

namespace detail_train {

/// (B, ch, t) trials gathered into the model's (B, ch, t, 1) batch layout.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> make_batch(const TrialSet& set,
                                                  const std::vector<std::int64_t>& idx,
                                                  std::size_t lo, std::size_t hi) {
    const std::int64_t ch = set.n_channels();
    const std::int64_t sm = set.n_samples();
    const auto b = static_cast<std::int64_t>(hi - lo);
    Tensor<T> x({b, ch, sm, 1});
    std::vector<int> y(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        const std::int64_t trial = idx[lo + static_cast<std::size_t>(i)];
        const float* src = set.data.data() + trial * ch * sm;
        T* dst = x.data() + i * ch * sm;
        for (std::int64_t e = 0; e < ch * sm; ++e) dst[e] = static_cast<T>(src[e]);
        y[static_cast<std::size_t>(i)] = set.labels[static_cast<std::size_t>(trial)];
    }
    return {std::move(x), std::move(y)};
}

/// Batch boundaries such that no training chunk has a single sample (batch
/// norm needs two); a trailing singleton joins the previous chunk.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n,
                                                                     std::size_t bs) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t lo = 0; lo < n; lo += bs) out.emplace_back(lo, std::min(lo + bs, n));
    if (out.size() >= 2 && out.back().second - out.back().first == 1) {
        out[out.size() - 2].second = out.back().second;
        out.pop_back();
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> snapshot(Model<T>& model) {
    std::vector<Tensor<T>> out;
    for (auto* p : model.params()) out.push_back(p->value);
    return out;
}

template <typename T>
void restore(Model<T>& model, const std::vector<Tensor<T>>& snap) {
    auto params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

}  // namespace detail_train

/// Re-estimate batch-norm moving statistics exactly: one train-mode pass over
/// `idx` with frozen weights, pooling the per-batch feature statistics. At
/// desk-scale epoch budgets the momentum averages trail the (still moving)
/// feature distribution badly; the pooled statistics are what they estimate.
template <typename T>
void refresh_batch_stats(Model<T>& model, const TrialSet& set,
                         const std::vector<std::int64_t>& idx, int batch_size) {
    BnStatsAccum<T> accum;
    Rng unused(0);
    for (auto [lo, hi] : detail_train::batch_ranges(idx.size(), static_cast<std::size_t>(batch_size))) {
        auto [x, y] = detail_train::make_batch<T>(set, idx, lo, hi);
        Tape<T> tape;
        LayerContext<T> ctx{tape, Mode::train, unused, nullptr, &accum};
        model.run(ctx, tape.leaf(std::move(x), false));
    }
    model.for_each_layer([&accum](Layer<T>& l) {
        auto* bn = dynamic_cast<BatchNorm<T>*>(&l);
        if (!bn) return;
        auto it = accum.entries.find(l.id());
        if (it == accum.entries.end()) return;
        const auto& e = it->second;
        const std::int64_t F = e.mean_sum.size();
        Tensor<T> mean({F}), var({F});
        for (std::int64_t f = 0; f < F; ++f) {
            mean[f] = e.mean_sum[f] / static_cast<T>(e.weight);
            var[f] = e.m2_sum[f] / static_cast<T>(e.weight) - mean[f] * mean[f];
            if (var[f] < T{}) var[f] = T{};
        }
        bn->set_moving(mean, var);
    });
}

/// Mean loss and accuracy on a trial subset, inference mode (dropout off,
/// batch norm on moving statistics). Prediction ties break toward class 0.
template <typename T>
std::pair<double, double> evaluate_loss_acc(Model<T>& model, const TrialSet& set,
                                            const std::vector<std::int64_t>& idx,
                                            int batch_size) {
    if (idx.empty()) throw std::invalid_argument("evaluate: empty index set");
    double loss_sum = 0;
    std::int64_t correct = 0;
    Rng unused(0);
    for (auto [lo, hi] : detail_train::batch_ranges(idx.size(), static_cast<std::size_t>(batch_size))) {
        auto [x, y] = detail_train::make_batch<T>(set, idx, lo, hi);
        Tape<T> tape;
        LayerContext<T> ctx{tape, Mode::infer, unused, nullptr};
        auto fr = model.run(ctx, tape.leaf(std::move(x), false));
        Value<T> loss = cross_entropy_logits(fr.logits, y);
        loss_sum += static_cast<double>(loss.tensor()[0]) * static_cast<double>(y.size());
        const auto& probs = fr.probs.tensor();
        const std::int64_t k = probs.extent(1);
        for (std::size_t i = 0; i < y.size(); ++i) {
            std::int64_t arg = 0;
            for (std::int64_t c = 1; c < k; ++c)
                if (probs[static_cast<std::int64_t>(i) * k + c] >
                    probs[static_cast<std::int64_t>(i) * k + arg])
                    arg = c;
            correct += (arg == y[i]) ? 1 : 0;
        }
    }
    return {loss_sum / static_cast<double>(idx.size()),
            static_cast<double>(correct) / static_cast<double>(idx.size())};
}

/// Confusion-matrix metrics on a trial subset (inference mode).
template <typename T>
Metrics evaluate(Model<T>& model, const TrialSet& set, const std::vector<std::int64_t>& idx,
                 int batch_size = 32) {
    if (idx.empty()) throw std::invalid_argument("evaluate: empty index set");
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    Rng unused(0);
    for (auto [lo, hi] : detail_train::batch_ranges(idx.size(), static_cast<std::size_t>(batch_size))) {
        auto [x, y] = detail_train::make_batch<T>(set, idx, lo, hi);
        Tape<T> tape;
        LayerContext<T> ctx{tape, Mode::infer, unused, nullptr};
        auto fr = model.run(ctx, tape.leaf(std::move(x), false));
        const auto& probs = fr.probs.tensor();
        const std::int64_t k = probs.extent(1);
        for (std::size_t i = 0; i < y.size(); ++i) {
            std::int64_t arg = 0;  // ties resolve to the standard class
            for (std::int64_t c = 1; c < k; ++c)
                if (probs[static_cast<std::int64_t>(i) * k + c] >
                    probs[static_cast<std::int64_t>(i) * k + arg])
                    arg = c;
            if (y[i] == 1)
                (arg == 1 ? tp : fn) += 1;
            else
                (arg == 0 ? tn : fp) += 1;
        }
    }
    return Metrics::from_counts(tp, fp, tn, fn);
}

namespace detail_train {

/// One gradient epoch over `idx` (seeded shuffle, minibatches, Adam); returns
/// mean loss and accuracy over the epoch's forward passes.
template <typename T>
std::pair<double, double> run_epoch(Model<T>& model, const TrialSet& set,
                                    std::vector<std::int64_t>& idx, const TrainConfig& cfg,
                                    AdamState<T>& adam, Rng& shuffle_rng, Rng& dropout_rng,
                                    std::set<std::int64_t>* touched) {
    shuffle_rng.shuffle(idx.begin(), idx.end());
    double loss_sum = 0;
    std::int64_t correct = 0;
    for (auto [lo, hi] : batch_ranges(idx.size(), static_cast<std::size_t>(cfg.batch_size))) {
        auto [x, y] = make_batch<T>(set, idx, lo, hi);
        if (touched)
            for (std::size_t i = lo; i < hi; ++i) touched->insert(idx[i]);
        Tape<T> tape;
        std::vector<ParamBinding<T>> bindings;
        LayerContext<T> ctx{tape, Mode::train, dropout_rng, &bindings};
        auto fr = model.run(ctx, tape.leaf(std::move(x), false));
        Value<T> loss = cross_entropy_logits(fr.logits, y);
        tape.backward(loss);

        std::vector<Param<T>*> params;
        std::vector<Tensor<T>> grads;
        params.reserve(bindings.size());
        for (auto& b : bindings) {
            if (!b.param->trainable) continue;
            params.push_back(b.param);
            grads.push_back(tape.grad(b.leaf));
        }
        adam_step(params, grads, adam, cfg);

        loss_sum += static_cast<double>(loss.tensor()[0]) * static_cast<double>(y.size());
        const auto& probs = fr.probs.tensor();
        const std::int64_t k = probs.extent(1);
        for (std::size_t i = 0; i < y.size(); ++i) {
            std::int64_t arg = 0;
            for (std::int64_t c = 1; c < k; ++c)
                if (probs[static_cast<std::int64_t>(i) * k + c] >
                    probs[static_cast<std::int64_t>(i) * k + arg])
                    arg = c;
            correct += (arg == y[i]) ? 1 : 0;
        }
    }
    return {loss_sum / static_cast<double>(idx.size()),
            static_cast<double>(correct) / static_cast<double>(idx.size())};
}

}  // namespace detail_train

/// Select-phase training: epochs_select epochs with seeded shuffling, the
/// checkpoint with the lowest validation loss (inference mode) is restored
/// into the model before returning.
template <typename T>
TrainReport train(Model<T>& model, const TrialSet& set, const std::vector<std::int64_t>& train_idx,
                  const std::vector<std::int64_t>& val_idx, const TrainConfig& cfg) {
    cfg.validate();
    if (train_idx.empty() || val_idx.empty())
        throw std::invalid_argument("train: empty train or validation set");
    const auto t0 = std::chrono::steady_clock::now();

    TrainReport report;
    report.seed = cfg.seed;
    report.config = cfg;
    std::set<std::int64_t> touched;

    AdamState<T> adam;
    Rng shuffle_rng = Rng::derive(cfg.seed, 1);
    Rng dropout_rng = Rng::derive(cfg.seed, 2);
    std::vector<std::int64_t> idx = train_idx;
    std::vector<Tensor<T>> best;
    for (int epoch = 0; epoch < cfg.epochs_select; ++epoch) {
        auto [tl, ta] = detail_train::run_epoch(model, set, idx, cfg, adam, shuffle_rng,
                                                dropout_rng, &touched);
        auto [vl, va] = evaluate_loss_acc(model, set, val_idx, cfg.batch_size);
        report.epochs.push_back({epoch, "select", tl, ta, vl, va});
        if (vl < report.best_val_loss) {
            report.best_val_loss = vl;
            report.selected_epoch = epoch;
            best = detail_train::snapshot(model);
        }
    }
    detail_train::restore(model, best);
    refresh_batch_stats(model, set, train_idx, cfg.batch_size);
    report.touched_indices.assign(touched.begin(), touched.end());
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

/// Retraining continuation: more epochs on a combined index set, starting
/// from the current (selected) weights with a fresh optimizer.
template <typename T>
void retrain(Model<T>& model, const TrialSet& set, const std::vector<std::int64_t>& idx_in,
             const TrainConfig& cfg, TrainReport& report) {
    AdamState<T> adam;
    Rng shuffle_rng = Rng::derive(cfg.seed, 3);
    Rng dropout_rng = Rng::derive(cfg.seed, 4);
    std::vector<std::int64_t> idx = idx_in;
    std::set<std::int64_t> touched(report.touched_indices.begin(),
                                   report.touched_indices.end());
    for (int epoch = 0; epoch < cfg.epochs_retrain; ++epoch) {
        auto [tl, ta] = detail_train::run_epoch(model, set, idx, cfg, adam, shuffle_rng,
                                                dropout_rng, &touched);
        EpochStats es;
        es.epoch = epoch;
        es.phase = "retrain";
        es.train_loss = tl;
        es.train_acc = ta;
        report.epochs.push_back(es);
    }
    if (cfg.epochs_retrain > 0) refresh_batch_stats(model, set, idx_in, cfg.batch_size);
    report.touched_indices.assign(touched.begin(), touched.end());
}

struct MetricAggregate {
    double mean = 0, stddev = 0;
};

inline MetricAggregate aggregate(const std::vector<double>& xs) {
    MetricAggregate a;
    if (xs.empty()) return a;
    for (double x : xs) a.mean += x;
    a.mean /= static_cast<double>(xs.size());
    double var = 0;
    for (double x : xs) var += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(var / static_cast<double>(xs.size()));  // population sigma across folds
    return a;
}

struct CvResult {
    std::vector<FoldSplit> splits;
    std::vector<TrainReport> fold_reports;
    MetricAggregate accuracy, sensitivity, specificity;
};

struct CvOptions {
    int folds = 5;
    int run_folds = 5;  // evaluate only the first run_folds folds (desk runs)
    int threads = 1;
};

/// The 5-fold protocol: disjoint 20% test partitions; per fold the remaining
/// 80% splits 3:1 into train/val; select over epochs_select, continue the
/// best checkpoint for epochs_retrain on train+val, evaluate once on the
/// untouched test partition. Folds run independently (derived seeds), so the
/// result does not depend on the thread count.
template <typename T>
CvResult cross_validate(const TrialSet& set, const ModelConfig& mcfg, const TrainConfig& tcfg,
                        const CvOptions& opts = {}) {
    tcfg.validate();
    if (set.n_trials() < 2 * opts.folds)
        throw std::invalid_argument("cv: dataset too small for " + std::to_string(opts.folds) +
                                    " folds");
    CvResult result;
    result.splits = stratified_folds(set.labels, opts.folds, Rng::derive(tcfg.seed, 0xf01d));
    const int n_run = std::min(opts.run_folds, opts.folds);
    result.fold_reports.resize(static_cast<std::size_t>(n_run));

    auto run_fold = [&](int f) {
        const FoldSplit& split = result.splits[static_cast<std::size_t>(f)];
        const std::uint64_t fold_seed =
            Rng::derive(tcfg.seed, 0xc0de00ull + static_cast<std::uint64_t>(f)).seed();
        Rng init_rng = Rng::derive(fold_seed, 0);
        Model<T> model(mcfg, init_rng);
        TrainConfig fold_cfg = tcfg;
        fold_cfg.seed = fold_seed;
        TrainReport rep = train(model, set, split.train, split.val, fold_cfg);
        std::vector<std::int64_t> combined = split.train;
        combined.insert(combined.end(), split.val.begin(), split.val.end());
        std::sort(combined.begin(), combined.end());
        retrain(model, set, combined, fold_cfg, rep);
        rep.test = evaluate(model, set, split.test, fold_cfg.batch_size);

        // Test-set hygiene: no test trial may ever reach a gradient update.
        for (auto t : rep.touched_indices)
            if (std::binary_search(split.test.begin(), split.test.end(), t))
                throw std::logic_error("cv: test index " + std::to_string(t) +
                                       " leaked into training on fold " + std::to_string(f));
        result.fold_reports[static_cast<std::size_t>(f)] = std::move(rep);
    };

    if (opts.threads <= 1) {
        for (int f = 0; f < n_run; ++f) run_fold(f);
    } else {
        for (int start = 0; start < n_run; start += opts.threads) {
            std::vector<std::thread> pool;
            for (int f = start; f < std::min(start + opts.threads, n_run); ++f)
                pool.emplace_back(run_fold, f);
            for (auto& th : pool) th.join();
        }
    }

    std::vector<double> acc, sens, spec;
    for (const auto& rep : result.fold_reports) {
        acc.push_back(rep.test.accuracy);
        sens.push_back(rep.test.sensitivity);
        spec.push_back(rep.test.specificity);
    }
    result.accuracy = aggregate(acc);
    result.sensitivity = aggregate(sens);
    result.specificity = aggregate(spec);
    return result;
}

}  // namespace absnet
