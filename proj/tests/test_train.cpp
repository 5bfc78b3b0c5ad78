#include <catch2/catch_amalgamated.hpp>

#include "absolutenet/train.hpp"
#include "oracles.hpp"

using namespace absnet;

namespace {

// Small-but-real setup: a shrunken architecture over a shrunken easy dataset
// keeps the full training path fast enough for unit tests.
ModelConfig tiny_model(std::int64_t channels = 6, std::int64_t samples = 30) {
    ModelConfig cfg;
    cfg.input_channels = channels;
    cfg.spatial_kernel = channels;
    cfg.input_samples = samples;
    cfg.temporal_kernel = 3;
    cfg.st_spatial_filters = 4;
    cfg.st_temporal_filters = 6;
    cfg.ts_temporal_filters = 3;
    cfg.ts_spatial_filters = 6;
    cfg.separable_kernel = 3;
    cfg.separable_filters = 4;
    cfg.pool_size = 6;
    cfg.pool_stride = 4;
    cfg.dropout_rate = 0.2;
    return cfg;
}

TrialSet tiny_easy_set(std::int64_t per_class, std::uint64_t seed, double deviant_amp = 3.0,
                       std::int64_t channels = 6, std::int64_t samples = 30) {
    TrialSet set;
    Rng rng(seed);
    const std::int64_t n = 2 * per_class;
    set.data = Tensor<float>({n, channels, samples});
    set.labels.resize(static_cast<std::size_t>(n));
    set.meta.subject.assign(static_cast<std::size_t>(n), 0);
    set.meta.run.assign(static_cast<std::size_t>(n), 0);
    set.meta.channel_names.assign(static_cast<std::size_t>(channels), "ch");
    for (std::int64_t t = 0; t < n; ++t) {
        const int cls = static_cast<int>(t % 2);
        set.labels[static_cast<std::size_t>(t)] = static_cast<std::uint8_t>(cls);
        const double amp = cls ? deviant_amp : 1.0;
        for (std::int64_t c = 0; c < channels; ++c)
            for (std::int64_t s = 0; s < samples; ++s) {
                const double bump =
                    amp * std::exp(-0.5 * std::pow((static_cast<double>(s) - 12.0) / 4.0, 2.0));
                set.data[(t * channels + c) * samples + s] =
                    static_cast<float>(bump + rng.normal(0.0, 0.1));
            }
    }
    return set;
}

}  // namespace

TEST_CASE("cross_entropy: analytic anchors", "[train]") {
    Tape<double> tape;
    // uniform scores -> ln 2
    auto logits = tape.leaf(Tensor<double>({1, 2}, {0.0, 0.0}));
    std::vector<int> label{0};
    REQUIRE(cross_entropy_logits(logits, label).tensor()[0] ==
            Catch::Approx(std::log(2.0)).margin(1e-12));

    // strongly peaked on the true class -> approximately 0
    auto sharp = tape.leaf(Tensor<double>({1, 2}, {30.0, -30.0}));
    REQUIRE(cross_entropy_logits(sharp, label).tensor()[0] == Catch::Approx(0.0).margin(1e-9));

    std::vector<int> bad{2};
    REQUIRE_THROWS_AS(cross_entropy_logits(logits, bad), std::invalid_argument);
}

TEST_CASE("cross_entropy: gradient against finite differences", "[train][oracle]") {
    Rng rng(41);
    Tensor<double> z({3, 2});
    for (std::int64_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
    std::vector<int> labels{0, 1, 1};

    Tape<double> tape;
    auto zv = tape.leaf(z, true);
    tape.backward(cross_entropy_logits(zv, labels));
    const auto& g = tape.grad(zv);

    const double h = 1e-6;
    for (std::int64_t e = 0; e < z.size(); ++e) {
        auto eval = [&](double delta) {
            Tensor<double> p = z;
            p[e] += delta;
            Tape<double> t2;
            return cross_entropy_logits(t2.leaf(p), labels).tensor()[0];
        };
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        REQUIRE(g[e] == Catch::Approx(fd).margin(1e-6));
    }
}

TEST_CASE("adam: first step matches the hand-computed update", "[train][oracle]") {
    TrainConfig cfg;
    cfg.learning_rate = 9e-4;
    Param<double> p{"p", Tensor<double>({2}, {1.0, -0.5}), true};
    std::vector<Param<double>*> params{&p};
    std::vector<Tensor<double>> grads{Tensor<double>({2}, {1.0, 1.0})};
    AdamState<double> state;
    adam_step(params, grads, state, cfg);

    const double want = oracles::adam_reference_step(1.0, 1.0, 9e-4, 0.9, 0.999, 1e-8);
    REQUIRE(p.value[0] == Catch::Approx(want).margin(1e-15));
    // bias-corrected first step is roughly lr * sign(grad)
    REQUIRE(1.0 - p.value[0] == Catch::Approx(9e-4).epsilon(1e-4));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged", "[train]") {
    TrainConfig cfg;
    Param<float> p{"p", Tensor<float>({3}, {1.0f, 2.0f, 3.0f}), true};
    std::vector<Param<float>*> params{&p};
    std::vector<Tensor<float>> grads{Tensor<float>::zeros({3})};
    AdamState<float> state;
    adam_step(params, grads, state, cfg);
    REQUIRE(p.value == Tensor<float>({3}, {1.0f, 2.0f, 3.0f}));
}

TEST_CASE("adam: identical tensors update identically", "[train]") {
    TrainConfig cfg;
    Param<double> a{"a", Tensor<double>({2}, {0.3, 0.7}), true};
    Param<double> b{"b", Tensor<double>({2}, {0.3, 0.7}), true};
    std::vector<Param<double>*> params{&a, &b};
    Tensor<double> g({2}, {0.1, -0.2});
    std::vector<Tensor<double>> grads{g, g};
    AdamState<double> state;
    adam_step(params, grads, state, cfg);
    adam_step(params, {g, g}, state, cfg);
    REQUIRE(a.value == b.value);

    std::vector<Tensor<double>> wrong{Tensor<double>::zeros({3}), g};
    REQUIRE_THROWS_AS(adam_step(params, wrong, state, cfg), std::invalid_argument);
}

TEST_CASE("folds: disjoint cover with 60/20/20 stratification", "[train][property]") {
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < 200; ++i) labels.push_back(static_cast<std::uint8_t>(i % 2));
    auto folds = stratified_folds(labels, 5, Rng(7));
    REQUIRE(folds.size() == 5);

    std::vector<int> test_seen(200, 0);
    for (const auto& f : folds) {
        // within-fold disjointness and full coverage
        std::vector<int> seen(200, 0);
        for (auto i : f.train) ++seen[static_cast<std::size_t>(i)];
        for (auto i : f.val) ++seen[static_cast<std::size_t>(i)];
        for (auto i : f.test) ++seen[static_cast<std::size_t>(i)];
        for (int c : seen) REQUIRE(c == 1);
        for (auto i : f.test) ++test_seen[static_cast<std::size_t>(i)];

        REQUIRE(std::abs(static_cast<double>(f.train.size()) - 120.0) <= 1.0);
        REQUIRE(std::abs(static_cast<double>(f.val.size()) - 40.0) <= 1.0);
        REQUIRE(std::abs(static_cast<double>(f.test.size()) - 40.0) <= 1.0);

        // class stratification within one trial of parity
        for (const auto* part : {&f.train, &f.val, &f.test}) {
            std::int64_t ones = 0;
            for (auto i : *part) ones += labels[static_cast<std::size_t>(i)];
            REQUIRE(std::abs(2.0 * static_cast<double>(ones) -
                             static_cast<double>(part->size())) <= 1.0);
        }
    }
    // test partitions are pairwise disjoint and cover the dataset
    for (int c : test_seen) REQUIRE(c == 1);
}

TEST_CASE("folds: rejects undersized classes", "[train]") {
    std::vector<std::uint8_t> labels{0, 0, 0, 1, 1};
    REQUIRE_THROWS_AS(stratified_folds(labels, 5, Rng(1)), std::invalid_argument);
}

TEST_CASE("train: one epoch means one report entry", "[train]") {
    TrialSet set = tiny_easy_set(20, 3);
    auto folds = stratified_folds(set.labels, 5, Rng(9));
    TrainConfig cfg;
    cfg.epochs_select = 1;
    cfg.batch_size = 8;
    cfg.seed = 5;
    Rng init(1);
    Model<float> model(tiny_model(), init);
    TrainReport rep = train(model, set, folds[0].train, folds[0].val, cfg);
    REQUIRE(rep.epochs.size() == 1);
    REQUIRE(rep.selected_epoch == 0);
}

TEST_CASE("train: identical seeds give identical loss curves", "[train]") {
    TrialSet set = tiny_easy_set(20, 3);
    auto folds = stratified_folds(set.labels, 5, Rng(9));
    TrainConfig cfg;
    cfg.epochs_select = 3;
    cfg.batch_size = 8;
    cfg.seed = 5;
    auto run = [&] {
        Rng init(1);
        Model<float> model(tiny_model(), init);
        return train(model, set, folds[0].train, folds[0].val, cfg);
    };
    TrainReport a = run();
    TrainReport b = run();
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        REQUIRE(a.epochs[i].train_loss == b.epochs[i].train_loss);
        REQUIRE(a.epochs[i].val_loss == b.epochs[i].val_loss);
    }
}

TEST_CASE("train: loss decreases and the checkpoint is the argmin", "[train]") {
    TrialSet set = tiny_easy_set(40, 13);
    auto folds = stratified_folds(set.labels, 5, Rng(2));
    TrainConfig cfg;
    cfg.epochs_select = 15;
    cfg.batch_size = 8;
    cfg.seed = 21;
    Rng init(3);
    Model<float> model(tiny_model(), init);
    TrainReport rep = train(model, set, folds[0].train, folds[0].val, cfg);

    REQUIRE(rep.epochs[4].train_loss < rep.epochs[0].train_loss);

    // re-scan the curve: the selected epoch is the argmin of validation loss
    int argmin = 0;
    for (std::size_t e = 1; e < rep.epochs.size(); ++e)
        if (rep.epochs[e].val_loss < rep.epochs[static_cast<std::size_t>(argmin)].val_loss)
            argmin = static_cast<int>(e);
    REQUIRE(rep.selected_epoch == argmin);
    REQUIRE(rep.best_val_loss ==
            rep.epochs[static_cast<std::size_t>(argmin)].val_loss);

    // easy data: the model fits its training set
    auto [tl, ta] = evaluate_loss_acc(model, set, folds[0].train, cfg.batch_size);
    REQUIRE(ta >= 0.99);
}

TEST_CASE("train: empty sets are rejected", "[train]") {
    TrialSet set = tiny_easy_set(10, 3);
    TrainConfig cfg;
    Rng init(1);
    Model<float> model(tiny_model(), init);
    REQUIRE_THROWS_AS(train(model, set, {}, {0, 1}, cfg), std::invalid_argument);
}

TEST_CASE("evaluate: metric formulas", "[train]") {
    Metrics m = Metrics::from_counts(9, 2, 8, 1);
    REQUIRE(m.sensitivity == Catch::Approx(0.90));
    REQUIRE(m.specificity == Catch::Approx(0.80));
    REQUIRE(m.accuracy == Catch::Approx(0.85));

    Metrics all = Metrics::from_counts(10, 0, 10, 0);
    REQUIRE(all.accuracy == 1.0);
    REQUIRE(all.sensitivity == 1.0);
    REQUIRE(all.specificity == 1.0);
}

TEST_CASE("evaluate: double-entry confusion oracle", "[train][oracle]") {
    TrialSet set = tiny_easy_set(25, 17);
    auto folds = stratified_folds(set.labels, 5, Rng(5));
    TrainConfig cfg;
    cfg.epochs_select = 4;
    cfg.batch_size = 8;
    cfg.seed = 31;
    Rng init(7);
    Model<float> model(tiny_model(), init);
    train(model, set, folds[0].train, folds[0].val, cfg);
    Metrics m = evaluate(model, set, folds[0].test, cfg.batch_size);

    // independently accumulated confusion matrix from raw forward passes
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (auto idx : folds[0].test) {
        Tensor<float> x({1, set.n_channels(), set.n_samples(), 1});
        for (std::int64_t e = 0; e < set.n_channels() * set.n_samples(); ++e)
            x[e] = set.data[idx * set.n_channels() * set.n_samples() + e];
        Tape<float> tape;
        Rng r(0);
        LayerContext<float> ctx{tape, Mode::infer, r};
        auto probs = model.forward(ctx, tape.leaf(std::move(x)));
        const int pred = probs.tensor()[1] > probs.tensor()[0] ? 1 : 0;
        const int truth = set.labels[static_cast<std::size_t>(idx)];
        if (truth == 1)
            (pred == 1 ? tp : fn) += 1;
        else
            (pred == 0 ? tn : fp) += 1;
    }
    REQUIRE(m.tp == tp);
    REQUIRE(m.fp == fp);
    REQUIRE(m.tn == tn);
    REQUIRE(m.fn == fn);

    // integer identity: accuracy * total == tp + tn
    const std::int64_t total = m.tp + m.fp + m.tn + m.fn;
    REQUIRE(static_cast<std::int64_t>(std::llround(m.accuracy * static_cast<double>(total))) ==
            m.tp + m.tn);
}

TEST_CASE("cv: hygiene, coverage and determinism on a small run", "[train][cv]") {
    TrialSet set = tiny_easy_set(25, 23);
    TrainConfig cfg;
    cfg.epochs_select = 2;
    cfg.epochs_retrain = 1;
    cfg.batch_size = 8;
    cfg.seed = 77;
    CvOptions opts;

    CvResult cv = cross_validate<float>(set, tiny_model(), cfg, opts);
    REQUIRE(cv.fold_reports.size() == 5);

    // disjoint test partitions covering the dataset
    std::vector<int> seen(static_cast<std::size_t>(set.n_trials()), 0);
    for (const auto& split : cv.splits)
        for (auto i : split.test) ++seen[static_cast<std::size_t>(i)];
    for (int c : seen) REQUIRE(c == 1);

    // instrumented hygiene: every gradient-touched index is outside the fold's test set
    for (std::size_t f = 0; f < cv.fold_reports.size(); ++f) {
        const auto& touched = cv.fold_reports[f].touched_indices;
        REQUIRE(!touched.empty());
        for (auto t : touched)
            REQUIRE(!std::binary_search(cv.splits[f].test.begin(), cv.splits[f].test.end(), t));
        // and the touched set is exactly train + val
        REQUIRE(touched.size() == cv.splits[f].train.size() + cv.splits[f].val.size());
    }

    // determinism incl. the threaded path
    CvOptions two;
    two.threads = 2;
    CvResult again = cross_validate<float>(set, tiny_model(), cfg, two);
    REQUIRE(again.accuracy.mean == cv.accuracy.mean);
    for (std::size_t f = 0; f < 5; ++f)
        REQUIRE(again.fold_reports[f].test.accuracy == cv.fold_reports[f].test.accuracy);
}

TEST_CASE("cv: rejects too-small datasets", "[train][cv]") {
    TrialSet set = tiny_easy_set(2, 1);
    TrainConfig cfg;
    REQUIRE_THROWS_AS(cross_validate<float>(set, tiny_model(), cfg), std::invalid_argument);
}
