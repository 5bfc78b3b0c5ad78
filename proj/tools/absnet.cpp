// absnet: experiment driver for the AbsoluteNet fNIRS classifier.
//
// Subcommands: gen, verify-arch, train, cv, ablate, ga, gradcheck.
// Exit codes: 0 success, 1 verification/comparison failure, 2 usage error,
// 3 I/O error.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "absolutenet/config.hpp"
#include "absolutenet/csv.hpp"
#include "absolutenet/data.hpp"
#include "absolutenet/ga.hpp"
#include "absolutenet/gradcheck.hpp"
#include "absolutenet/manifest.hpp"
#include "absolutenet/model.hpp"
#include "absolutenet/reference.hpp"
#include "absolutenet/runtime.hpp"
#include "absolutenet/serialize.hpp"
#include "absolutenet/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
    if (const char* env = std::getenv("FNIRS_SEED")) {
        try {
            return static_cast<std::uint64_t>(std::stoull(env));
        } catch (const std::exception&) {
            throw std::invalid_argument("FNIRS_SEED is not an integer: '" + std::string(env) +
                                        "'");
        }
    }
    return 42;
}

absnet::TrialSet load_dataset_or_throw(const std::string& path) {
    try {
        return absnet::read_dataset(path);
    } catch (const std::exception& e) {
        throw IoError(e.what());
    }
}

// Resolved option state shared by the model-driving commands.
struct RunOpts {
    std::string dataset;
    std::string input = "both";
    std::string out_prefix;
    std::string config_path;
    std::string override_path;
    std::uint64_t seed = 42;
    int threads = 1;
    absnet::ModelConfig model;
    absnet::TrainConfig train;

    void load_config_files() {
        if (!config_path.empty()) {
            absnet::ConfigMap cfg = absnet::ConfigMap::load(config_path);
            absnet::apply_overrides(cfg, model);
            absnet::apply_overrides(cfg, train);
        }
        if (!override_path.empty()) {
            absnet::ConfigMap cfg = absnet::ConfigMap::load(override_path);
            absnet::apply_overrides(cfg, model);
            absnet::apply_overrides(cfg, train);
        }
    }

    /// Adapt the architecture to the chosen input modality and dataset.
    void shape_to_dataset(const absnet::TrialSet& set, absnet::Modality modality) {
        model.input_samples = set.n_samples();
        if (modality == absnet::Modality::both) {
            model.input_channels = set.n_channels();
        } else {
            model.input_channels = absnet::kHbChannels;
            if (model.variant == absnet::Variant::full)
                model.variant = absnet::Variant::single_modality;
        }
        model.spatial_kernel = model.input_channels;
    }

    absnet::ConfigMap resolved() const {
        absnet::ConfigMap c;
        c.set_i("input_channels", model.input_channels);
        c.set_i("input_samples", model.input_samples);
        c.set_i("spatial_kernel", model.spatial_kernel);
        c.set_i("temporal_kernel", model.temporal_kernel);
        c.set_i("st_spatial_filters", model.st_spatial_filters);
        c.set_i("st_temporal_filters", model.st_temporal_filters);
        c.set_i("ts_temporal_filters", model.ts_temporal_filters);
        c.set_i("ts_spatial_filters", model.ts_spatial_filters);
        c.set_i("separable_kernel", model.separable_kernel);
        c.set_i("separable_filters", model.separable_filters);
        c.set_i("pool_size", model.pool_size);
        c.set_i("pool_stride", model.pool_stride);
        c.set_f("dropout_rate", model.dropout_rate);
        c.set_f("log_eps", model.log_eps);
        c.set("variant", absnet::variant_name(model.variant));
        c.set_f("learning_rate", train.learning_rate);
        c.set_i("epochs_select", train.epochs_select);
        c.set_i("epochs_retrain", train.epochs_retrain);
        c.set_i("batch_size", train.batch_size);
        c.set("input", input);
        if (!dataset.empty()) c.set("dataset", dataset);
        c.set_i("threads", threads);
        return c;
    }
};

void write_manifest(const std::string& command, const RunOpts& opts,
                    const std::vector<std::string>& outputs, const std::string& path) {
    absnet::RunManifest m;
    m.command = command;
    m.seed = opts.seed;
    m.config = opts.resolved();
    m.outputs = outputs;
    m.write(path);
}

// -------------------------------------------------------------------------
// gen
// -------------------------------------------------------------------------

struct GenArgs {
    std::string output;
    absnet::SynthConfig synth;
    std::string config_path;
};

int cmd_gen(const GenArgs& args) {
    absnet::SynthConfig cfg = args.synth;
    if (!args.config_path.empty()) {
        absnet::ConfigMap file = absnet::ConfigMap::load(args.config_path);
        absnet::apply_overrides(file, cfg.hrf);
        cfg.trials_per_class = file.get_i("trials_per_class", cfg.trials_per_class);
        cfg.seed = static_cast<std::uint64_t>(
            file.get_i("seed", static_cast<std::int64_t>(cfg.seed)));
    }
    absnet::TrialSet set = absnet::synth_epochs(cfg);

    std::vector<std::pair<std::string, std::string>> provenance;
    absnet::ConfigMap prov;
    prov.set_i("seed", static_cast<std::int64_t>(cfg.seed));
    prov.set_i("trials_per_class", cfg.trials_per_class);
    prov.set_i("subjects", cfg.paradigm.subjects);
    prov.set_i("runs_per_subject", cfg.paradigm.runs_per_subject);
    prov.set_i("deviants_per_run", cfg.paradigm.deviants_per_run);
    prov.set_f("standard_amp", cfg.hrf.class_amp[0]);
    prov.set_f("deviant_amp", cfg.hrf.class_amp[1]);
    prov.set_f("noise_sigma", cfg.hrf.noise_sigma);
    prov.set_f("trial_jitter", cfg.hrf.trial_jitter);
    prov.set_f("hbr_ratio", cfg.hrf.hbr_ratio);
    for (const auto& [k, v] : prov.entries()) provenance.emplace_back(k, v);
    try {
        absnet::write_dataset(set, args.output, provenance);
    } catch (const std::exception& e) {
        throw IoError(e.what());
    }

    std::int64_t per_class[2] = {0, 0};
    for (auto b : set.labels) ++per_class[b ? 1 : 0];
    std::printf("wrote %s: %lld trials (%lld standard / %lld deviant), %lldx%lld @ %.0f Hz\n",
                args.output.c_str(), static_cast<long long>(set.n_trials()),
                static_cast<long long>(per_class[0]), static_cast<long long>(per_class[1]),
                static_cast<long long>(set.n_channels()),
                static_cast<long long>(set.n_samples()), set.meta.sample_rate_hz);
    std::printf("amplitudes standard %.3g deviant %.3g, noise sigma %.3g, jitter %.3g\n",
                cfg.hrf.class_amp[0], cfg.hrf.class_amp[1], cfg.hrf.noise_sigma,
                cfg.hrf.trial_jitter);

    absnet::RunManifest m;
    m.command = "gen";
    m.seed = cfg.seed;
    m.config = prov;
    m.outputs = {args.output, args.output + ".meta"};
    m.write(args.output + ".manifest");
    return kExitOk;
}

// -------------------------------------------------------------------------
// verify-arch
// -------------------------------------------------------------------------

int cmd_verify_arch(RunOpts& opts, const std::string& manifest_path) {
    opts.load_config_files();
    absnet::Rng rng(opts.seed);
    absnet::Model<float> model(opts.model, rng);
    absnet::LayerReport rep = model.report();

    const bool compare = opts.model.variant == absnet::Variant::full;
    if (!compare) {
        std::printf("%s", rep.to_text().c_str());
        std::printf("(variant %s: no reference table to compare against)\n",
                    absnet::variant_name(opts.model.variant));
        write_manifest("verify-arch", opts, {}, manifest_path);
        return kExitOk;
    }

    const auto& ref = absnet::stock_reference_rows();
    std::printf("%-28s %-22s %8s   %-22s %8s\n", "Layer", "expected dim", "params", "actual dim",
                "params");
    const std::size_t n = std::max(ref.size(), rep.rows.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::string el = i < ref.size() ? ref[i].layer : "<absent>";
        const std::string es = i < ref.size() ? absnet::shape_str(ref[i].output) : "";
        const std::string ep = i < ref.size() ? std::to_string(ref[i].params) : "";
        const std::string as = i < rep.rows.size() ? absnet::shape_str(rep.rows[i].output) : "";
        const std::string ap = i < rep.rows.size() ? std::to_string(rep.rows[i].params) : "";
        std::printf("%-28s %-22s %8s   %-22s %8s\n", el.c_str(), es.c_str(), ep.c_str(),
                    as.c_str(), ap.c_str());
    }
    std::printf("%-28s %-22s %8lld   %-22s %8lld\n", "trainable total", "",
                static_cast<long long>(absnet::kStockTrainableParams), "",
                static_cast<long long>(rep.trainable));
    std::printf("%-28s %-22s %8lld   %-22s %8lld\n", "overall total", "",
                static_cast<long long>(absnet::kStockTotalParams), "",
                static_cast<long long>(rep.total));

    const auto diffs = absnet::diff_against_reference(rep);
    write_manifest("verify-arch", opts, {}, manifest_path);
    if (diffs.empty()) {
        std::printf("verify-arch: all %zu rows and both totals match\n", ref.size());
        return kExitOk;
    }
    std::printf("verify-arch: %zu mismatches\n", diffs.size());
    for (const auto& d : diffs)
        std::printf("  row %zu: expected %s, got %s\n", d.row, d.expected.c_str(),
                    d.actual.c_str());
    return kExitVerifyFail;
}

// -------------------------------------------------------------------------
// train / cv
// -------------------------------------------------------------------------

int cmd_train(RunOpts& opts, const std::string& save_model_path) {
    opts.load_config_files();
    absnet::TrialSet raw = load_dataset_or_throw(opts.dataset);
    const absnet::Modality modality = absnet::modality_from_name(opts.input);
    absnet::TrialSet set = absnet::split_modality(raw, modality);
    opts.shape_to_dataset(set, modality);
    opts.train.seed = opts.seed;

    const auto folds =
        absnet::stratified_folds(set.labels, 5, absnet::Rng::derive(opts.train.seed, 0xf01d));
    const absnet::FoldSplit& split = folds[0];

    absnet::Rng init_rng = absnet::Rng::derive(opts.seed, 0);
    absnet::Model<float> model(opts.model, init_rng);
    absnet::TrainReport rep = absnet::train(model, set, split.train, split.val, opts.train);
    std::vector<std::int64_t> combined = split.train;
    combined.insert(combined.end(), split.val.begin(), split.val.end());
    std::sort(combined.begin(), combined.end());
    absnet::retrain(model, set, combined, opts.train, rep);
    rep.test = absnet::evaluate(model, set, split.test, opts.train.batch_size);

    const std::string epochs_csv = opts.out_prefix + "_epochs.csv";
    absnet::write_epoch_csv(epochs_csv, {rep});
    std::vector<std::string> outputs = {epochs_csv};
    if (!save_model_path.empty()) {
        absnet::save_model(model, save_model_path);
        outputs.push_back(save_model_path);
    }

    std::printf("selected epoch %d (val loss %.6f)\n", rep.selected_epoch, rep.best_val_loss);
    std::printf("test: accuracy %.4f sensitivity %.4f specificity %.4f (tp %lld fp %lld tn %lld "
                "fn %lld)\n",
                rep.test.accuracy, rep.test.sensitivity, rep.test.specificity,
                static_cast<long long>(rep.test.tp), static_cast<long long>(rep.test.fp),
                static_cast<long long>(rep.test.tn), static_cast<long long>(rep.test.fn));
    write_manifest("train", opts, outputs, opts.out_prefix + ".manifest");
    return kExitOk;
}

int cmd_cv(RunOpts& opts, int run_folds) {
    opts.load_config_files();
    absnet::TrialSet raw = load_dataset_or_throw(opts.dataset);
    const absnet::Modality modality = absnet::modality_from_name(opts.input);
    absnet::TrialSet set = absnet::split_modality(raw, modality);
    opts.shape_to_dataset(set, modality);
    opts.train.seed = opts.seed;

    absnet::CvOptions cv_opts;
    cv_opts.run_folds = run_folds;
    cv_opts.threads = opts.threads;
    absnet::CvResult cv = absnet::cross_validate<float>(set, opts.model, opts.train, cv_opts);

    const std::string epochs_csv = opts.out_prefix + "_epochs.csv";
    const std::string summary_csv = opts.out_prefix + "_summary.csv";
    absnet::write_epoch_csv(epochs_csv, cv.fold_reports);
    absnet::write_cv_summary_csv(summary_csv, cv);

    for (std::size_t f = 0; f < cv.fold_reports.size(); ++f) {
        const auto& r = cv.fold_reports[f];
        std::printf("fold %zu: accuracy %.4f sensitivity %.4f specificity %.4f (selected epoch "
                    "%d)\n",
                    f, r.test.accuracy, r.test.sensitivity, r.test.specificity,
                    r.selected_epoch);
    }
    std::printf("%s (%s)\n", absnet::cv_summary_line(cv).c_str(), opts.input.c_str());
    write_manifest("cv", opts, {epochs_csv, summary_csv}, opts.out_prefix + ".manifest");
    return kExitOk;
}

// -------------------------------------------------------------------------
// ablate
// -------------------------------------------------------------------------

int cmd_ablate(RunOpts& opts, int run_folds) {
    opts.load_config_files();
    absnet::TrialSet set = load_dataset_or_throw(opts.dataset);
    opts.shape_to_dataset(set, absnet::Modality::both);
    opts.train.seed = opts.seed;

    struct Row {
        std::string name;
        absnet::ModelConfig cfg;
    };
    std::vector<Row> rows;
    rows.push_back({"full", opts.model});
    for (int study = 1; study <= 4; ++study)
        rows.push_back({"study" + std::to_string(study), absnet::ablate(opts.model, study)});

    const std::string csv_path = opts.out_prefix + ".csv";
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("ablate: cannot open '" + csv_path + "'");
    csv << absnet::kAblateCsvHeader << "\n";
    for (const auto& row : rows) {
        absnet::CvOptions cv_opts;
        cv_opts.run_folds = run_folds;
        cv_opts.threads = opts.threads;
        absnet::CvResult cv = absnet::cross_validate<float>(set, row.cfg, opts.train, cv_opts);
        const auto counts = absnet::closed_form_param_counts(row.cfg);
        csv << row.name << "," << counts.trainable << "," << absnet::csv_f(cv.accuracy.mean)
            << "," << absnet::csv_f(cv.accuracy.stddev) << ","
            << absnet::csv_f(cv.sensitivity.mean) << "," << absnet::csv_f(cv.sensitivity.stddev)
            << "," << absnet::csv_f(cv.specificity.mean) << ","
            << absnet::csv_f(cv.specificity.stddev) << "\n";
        std::printf("%-8s params %7lld  %s\n", row.name.c_str(),
                    static_cast<long long>(counts.trainable),
                    absnet::cv_summary_line(cv).c_str());
    }
    write_manifest("ablate", opts, {csv_path}, opts.out_prefix + ".manifest");
    return kExitOk;
}

// -------------------------------------------------------------------------
// ga
// -------------------------------------------------------------------------

int cmd_ga(RunOpts& opts, absnet::GaConfig ga_cfg) {
    opts.load_config_files();
    absnet::TrialSet raw = load_dataset_or_throw(opts.dataset);
    const absnet::Modality modality = absnet::modality_from_name(opts.input);
    absnet::TrialSet set = absnet::split_modality(raw, modality);
    opts.shape_to_dataset(set, modality);
    opts.train.seed = opts.seed;
    ga_cfg.seed = opts.seed;
    ga_cfg.threads = opts.threads;

    absnet::GeneBounds bounds;
    absnet::GaResult result =
        absnet::ga_search<float>(set, opts.model, opts.train, ga_cfg, bounds);

    const std::string log_csv = opts.out_prefix + "_log.csv";
    const std::string best_cfg = opts.out_prefix + "_best.cfg";
    absnet::write_ga_csv(log_csv, result);
    absnet::genome_to_config(result.best).save(best_cfg, "best genome; load via --config-override");

    std::printf("best fitness per generation:");
    for (double b : result.best_trajectory) std::printf(" %.6f", b);
    std::printf("\nbest genome: lr %.6g temporal %d separable %d pool %d stride %d (fitness "
                "%.6f)\n",
                result.best.learning_rate, result.best.temporal_kernel,
                result.best.separable_kernel, result.best.pool_size, result.best.pool_stride,
                result.best_fitness);
    write_manifest("ga", opts, {log_csv, best_cfg}, opts.out_prefix + ".manifest");
    return kExitOk;
}

// -------------------------------------------------------------------------
// gradcheck
// -------------------------------------------------------------------------

int cmd_gradcheck(const std::string& op, std::optional<double> at, double tolerance,
                  std::uint64_t seed, const std::string& manifest_path) {
    if (at.has_value()) {
        if (op.empty())
            throw std::invalid_argument("gradcheck: --at needs --op naming a pointwise primitive");
        const double g = absnet::gradcheck::pointwise_grad(op, *at);
        std::printf("%s gradient at %.9g: %.9g\n", op.c_str(), *at, g);
        return kExitOk;
    }
    const auto results = absnet::gradcheck::standard_checks(seed, tolerance, op);
    if (results.empty()) throw std::invalid_argument("gradcheck: no checks match '" + op + "'");
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-28s max_rel_err %.3e (tol %.1e) %s\n", r.name.c_str(), r.max_rel_err,
                    r.tolerance, r.pass ? "pass" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    std::printf("gradcheck: %s\n", all_pass ? "all checks passed" : "FAILURES");
    absnet::RunManifest m;
    m.command = "gradcheck";
    m.seed = seed;
    m.config.set_f("tolerance", tolerance);
    if (!op.empty()) m.config.set("op", op);
    m.write(manifest_path);
    return all_pass ? kExitOk : kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
    absnet::tune_allocator();
    CLI::App app{"AbsoluteNet fNIRS oddball classifier"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    bool seed_given = false;

    // ---- gen ----
    GenArgs gen;
    auto* sc_gen = app.add_subcommand("gen", "generate a synthetic oddball dataset");
    sc_gen->add_option("-o,--output", gen.output, "output .fnid path")->required();
    sc_gen->add_option("--trials-per-class", gen.synth.trials_per_class, "trials per class");
    sc_gen->add_option("--subjects", gen.synth.paradigm.subjects, "subjects");
    sc_gen->add_option("--runs", gen.synth.paradigm.runs_per_subject, "runs per subject");
    sc_gen->add_option("--deviants", gen.synth.paradigm.deviants_per_run, "deviants per run");
    sc_gen->add_option("--standards-min", gen.synth.paradigm.standards_min, "min standards/run");
    sc_gen->add_option("--standards-max", gen.synth.paradigm.standards_max, "max standards/run");
    sc_gen->add_option("--standard-amp", gen.synth.hrf.class_amp[0], "standard response scale");
    sc_gen->add_option("--deviant-amp", gen.synth.hrf.class_amp[1], "deviant response scale");
    sc_gen->add_option("--noise-sigma", gen.synth.hrf.noise_sigma, "white noise sigma");
    sc_gen->add_option("--jitter", gen.synth.hrf.trial_jitter, "per-trial amplitude jitter");
    sc_gen->add_option("--hbr-ratio", gen.synth.hrf.hbr_ratio, "HbR/HbO2 scale (negative)");
    sc_gen->add_option("--hbr-delay", gen.synth.hrf.hbr_delay_samples, "HbR delay (samples)");
    sc_gen->add_option("--confound-slow-amp", gen.synth.hrf.confounds[0].amp,
                       "~0.1 Hz confound amplitude");
    sc_gen->add_option("--confound-fast-amp", gen.synth.hrf.confounds[1].amp,
                       "~0.3 Hz confound amplitude");
    sc_gen->add_option("--config", gen.config_path, "key = value config file");

    // ---- verify-arch ----
    RunOpts va;
    std::string va_variant = "full";
    std::string va_manifest = "verify-arch.manifest";
    auto* sc_va = app.add_subcommand("verify-arch",
                                     "check layer dimensions and parameter counts");
    sc_va->add_option("--variant", va_variant,
                      "full|single|no_temporal_spatial|no_spatial_temporal|no_fusion1|no_fusion2");
    sc_va->add_option("--channels", va.model.input_channels, "input channels");
    sc_va->add_option("--temporal-kernel", va.model.temporal_kernel, "temporal kernel width");
    sc_va->add_option("--separable-kernel", va.model.separable_kernel, "separable kernel width");
    sc_va->add_option("--pool-size", va.model.pool_size, "pooling window");
    sc_va->add_option("--pool-stride", va.model.pool_stride, "pooling stride");
    sc_va->add_option("--config", va.config_path, "key = value config file");
    sc_va->add_option("--manifest", va_manifest, "manifest path");

    // ---- shared model/train flags builder ----
    auto add_run_opts = [&seed, &seed_given](CLI::App* sc, RunOpts& o, bool desk_defaults) {
        if (desk_defaults) {
            o.train.epochs_select = 30;
            o.train.epochs_retrain = 10;
        }
        sc->add_option("dataset", o.dataset, "dataset .fnid path")->required();
        sc->add_option("--input", o.input, "hbo2|hbr|both");
        sc->add_option("--epochs-select", o.train.epochs_select, "selection-phase epochs");
        sc->add_option("--epochs-retrain", o.train.epochs_retrain, "retraining epochs");
        sc->add_option("--lr", o.train.learning_rate, "learning rate");
        sc->add_option("--batch-size", o.train.batch_size, "minibatch size");
        sc->add_option("--threads", o.threads, "worker threads (1 = fully sequential)");
        sc->add_option("--config", o.config_path, "key = value config file");
        sc->add_option("--config-override", o.override_path,
                       "override file (e.g. a GA best genome)");
    };

    RunOpts tr;
    std::string tr_save;
    auto* sc_tr = app.add_subcommand("train", "single 60/20/20 training run");
    add_run_opts(sc_tr, tr, true);
    tr.out_prefix = "train";
    sc_tr->add_option("--out-prefix", tr.out_prefix, "output file prefix");
    sc_tr->add_option("--save-model", tr_save, "write trained weights (.absn)");

    RunOpts cv;
    int cv_folds = 5;
    auto* sc_cv = app.add_subcommand("cv", "5-fold cross-validation");
    add_run_opts(sc_cv, cv, true);
    cv.out_prefix = "cv";
    sc_cv->add_option("--out-prefix", cv.out_prefix, "output file prefix");
    sc_cv->add_option("--folds", cv_folds, "how many of the 5 folds to run");

    RunOpts ab;
    int ab_folds = 5;
    auto* sc_ab = app.add_subcommand("ablate", "component studies 1-4 plus the full model");
    add_run_opts(sc_ab, ab, true);
    ab.out_prefix = "ablate";
    sc_ab->add_option("--out-prefix", ab.out_prefix, "output file prefix");
    sc_ab->add_option("--folds", ab_folds, "how many of the 5 folds to run per variant");

    RunOpts ga;
    absnet::GaConfig ga_cfg;
    auto* sc_ga = app.add_subcommand("ga", "genetic hyperparameter search");
    add_run_opts(sc_ga, ga, true);
    ga.out_prefix = "ga";
    sc_ga->add_option("--out-prefix", ga.out_prefix, "output file prefix");
    sc_ga->add_option("--pop", ga_cfg.population, "population size");
    sc_ga->add_option("--gens", ga_cfg.generations, "generations");
    sc_ga->add_option("--mutation-rate", ga_cfg.mutation_rate, "per-gene mutation probability");
    sc_ga->add_option("--elite", ga_cfg.elite_count, "elites copied unchanged");
    sc_ga->add_option("--fitness-epochs", ga_cfg.fitness_epochs, "training epochs per fitness");

    // ---- gradcheck ----
    std::string gc_op;
    double gc_at = 0;
    bool gc_at_given = false;
    double gc_tol = 1e-4;
    std::string gc_manifest = "gradcheck.manifest";
    auto* sc_gc = app.add_subcommand("gradcheck",
                                     "finite-difference verification of all primitives");
    sc_gc->add_option("--op", gc_op, "filter checks by substring / probe target");
    sc_gc->add_option("--at", gc_at, "probe a pointwise op's gradient at this value")
        ->each([&gc_at_given](const std::string&) { gc_at_given = true; });
    sc_gc->add_option("--tolerance", gc_tol, "max relative error");
    sc_gc->add_option("--manifest", gc_manifest, "manifest path");

    for (auto* sc : {sc_gen, sc_va, sc_tr, sc_cv, sc_ab, sc_ga, sc_gc})
        sc->add_option("--seed", seed, "RNG seed (default: FNIRS_SEED env or 42)")
            ->each([&seed_given](const std::string&) { seed_given = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (!seed_given) seed = default_seed();
        if (sc_gen->parsed()) {
            gen.synth.seed = seed;
            return cmd_gen(gen);
        }
        if (sc_va->parsed()) {
            va.seed = seed;
            if (va_variant == "single")
                va.model.variant = absnet::Variant::single_modality;
            else
                va.model.variant = absnet::variant_from_name(va_variant);
            if (va.model.variant == absnet::Variant::single_modality &&
                !sc_va->count("--channels"))
                va.model.input_channels = absnet::kHbChannels;
            va.model.spatial_kernel = va.model.input_channels;
            return cmd_verify_arch(va, va_manifest);
        }
        if (sc_tr->parsed()) {
            tr.seed = seed;
            return cmd_train(tr, tr_save);
        }
        if (sc_cv->parsed()) {
            cv.seed = seed;
            return cmd_cv(cv, cv_folds);
        }
        if (sc_ab->parsed()) {
            ab.seed = seed;
            return cmd_ablate(ab, ab_folds);
        }
        if (sc_ga->parsed()) {
            ga.seed = seed;
            return cmd_ga(ga, ga_cfg);
        }
        if (sc_gc->parsed()) {
            return cmd_gradcheck(gc_op, gc_at_given ? std::optional<double>(gc_at) : std::nullopt,
                                 gc_tol, seed, gc_manifest);
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    }
    return kExitUsage;
}
