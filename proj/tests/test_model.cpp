#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "absolutenet/model.hpp"
#include "absolutenet/reference.hpp"
#include "absolutenet/serialize.hpp"
#include "oracles.hpp"

using namespace absnet;

namespace {

template <typename T>
Tensor<T> random_batch(const ModelConfig& cfg, std::int64_t n, Rng& rng) {
    Tensor<T> x({n, cfg.input_channels, cfg.input_samples, 1});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(rng.normal());
    return x;
}

}  // namespace

TEST_CASE("model: report matches the reference table cell by cell", "[model][oracle]") {
    Rng rng(42);
    Model<float> model(ModelConfig{}, rng);
    auto rep = model.report();
    REQUIRE(diff_against_reference(rep).empty());
    REQUIRE(rep.trainable == 49088);
    REQUIRE(rep.total == 49328);

    // spot checks straight from the published rows
    REQUIRE(rep.rows[1].layer == "Spatial Conv2D");
    REQUIRE(rep.rows[1].output == Shape{1, 150, 40});
    REQUIRE(rep.rows[1].params == 1120);
    REQUIRE(rep.rows[15].layer == "Separable Conv2D");
    REQUIRE(rep.rows[15].output == Shape{1, 146, 10});
    REQUIRE(rep.rows[15].params == 1560);
    REQUIRE(rep.rows[18].layer == "Average Pooling 2D");
    REQUIRE(rep.rows[18].output == Shape{1, 16, 10});
    REQUIRE(rep.rows[18].params == 0);
    REQUIRE(rep.rows[22].layer == "Flatten");
    REQUIRE(rep.rows[22].output == Shape{32});
}

TEST_CASE("model: totals for every variant match the independent counter", "[model][oracle]") {
    struct Case {
        ModelConfig cfg;
        std::int64_t trainable;
        std::int64_t total;
    };
    std::vector<Case> cases;
    cases.push_back({ModelConfig{}, 49088, 49328});
    cases.push_back({ModelConfig::single_modality_default(), 31728, 31968});
    ModelConfig base;
    cases.push_back({ablate(base, 1), 14328, 14448});
    cases.push_back({ablate(base, 2), 34868, 34988});
    cases.push_back({ablate(base, 3), 47728, 47968});
    cases.push_back({ablate(base, 4), 49608, 49848});

    for (const auto& c : cases) {
        INFO("variant " << variant_name(c.cfg.variant));
        const auto formula = oracles::count_params_by_formula(c.cfg);
        REQUIRE(formula.trainable == c.trainable);
        REQUIRE(formula.total == c.total);
        const auto closed = closed_form_param_counts(c.cfg);
        REQUIRE(closed.trainable == c.trainable);
        REQUIRE(closed.total == c.total);
        Rng rng(1);
        Model<float> model(c.cfg, rng);
        REQUIRE(model.trainable_params() == c.trainable);
        REQUIRE(model.total_params() == c.total);
    }
}

TEST_CASE("model: ablation shape consequences", "[model]") {
    ModelConfig base;
    Rng rng(3);

    Model<float> s1(ablate(base, 1), rng);
    auto rep1 = s1.report();
    bool found_bn = false;
    for (const auto& row : rep1.rows)
        if (row.layer == "Batch Normalization") {
            found_bn = true;
            REQUIRE(row.params == 240);  // 4*60
            REQUIRE(row.output == Shape{1, 146, 60});
        }
    REQUIRE(found_bn);

    Model<float> s3(ablate(base, 3), rng);
    auto rep3 = s3.report();
    for (const auto& row : rep3.rows)
        if (row.layer == "Average Pooling 2D") REQUIRE(row.output == Shape{1, 16, 120});

    Model<float> s4(ablate(base, 4), rng);
    auto rep4 = s4.report();
    for (const auto& row : rep4.rows)
        if (row.layer == "Flatten") REQUIRE(row.output == Shape{292});

    REQUIRE_THROWS_AS(ablate(base, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(ablate(ablate(base, 1), 2), std::invalid_argument);
}

TEST_CASE("model: forward rows are probability distributions", "[model]") {
    Rng rng(9);
    ModelConfig cfg;
    Model<float> model(cfg, rng);
    Tape<float> tape;
    Rng fw(10);
    LayerContext<float> ctx{tape, Mode::infer, fw};
    Rng data(11);
    auto probs = model.forward(ctx, tape.leaf(random_batch<float>(cfg, 4, data)));
    REQUIRE(probs.shape() == Shape{4, 2});
    for (std::int64_t r = 0; r < 4; ++r) {
        const double sum = probs.tensor()[r * 2] + probs.tensor()[r * 2 + 1];
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("model: zero input stays finite through the log activation", "[model]") {
    Rng rng(5);
    ModelConfig cfg;
    Model<float> model(cfg, rng);
    Tape<float> tape;
    Rng fw(6);
    LayerContext<float> ctx{tape, Mode::infer, fw};
    auto probs = model.forward(
        ctx, tape.leaf(Tensor<float>({2, cfg.input_channels, cfg.input_samples, 1})));
    for (std::int64_t i = 0; i < probs.tensor().size(); ++i)
        REQUIRE(std::isfinite(probs.tensor()[i]));
}

TEST_CASE("model: inference forward is deterministic", "[model]") {
    Rng rng(15);
    ModelConfig cfg;
    Model<float> model(cfg, rng);
    Rng data(16);
    Tensor<float> x = random_batch<float>(cfg, 3, data);
    auto run = [&] {
        Tape<float> tape;
        Rng fw(17);
        LayerContext<float> ctx{tape, Mode::infer, fw};
        return model.forward(ctx, tape.leaf(x)).tensor();
    };
    REQUIRE(run() == run());
}

TEST_CASE("model: symmetric activations are even functions", "[model][property]") {
    // f(-x) = f(x) at the activation level for all three kinds
    Rng rng(21);
    for (ActKind kind : {ActKind::square, ActKind::absolute, ActKind::log_abs}) {
        Activation<double> act("a", "t.a", kind, 1e-7);
        Tensor<double> x({64});
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal(0, 2);
        Tensor<double> nx = x;
        for (std::int64_t i = 0; i < nx.size(); ++i) nx[i] = -nx[i];
        Tape<double> tape;
        Rng fw(1);
        LayerContext<double> ctx{tape, Mode::infer, fw};
        auto y1 = act.forward(ctx, tape.leaf(x));
        auto y2 = act.forward(ctx, tape.leaf(nx));
        REQUIRE(y1.tensor() == y2.tensor());
    }
}

TEST_CASE("model: every variant trains one step without numeric faults", "[model]") {
    ModelConfig base;
    std::vector<ModelConfig> variants = {base,
                                         ablate(base, 1),
                                         ablate(base, 2),
                                         ablate(base, 3),
                                         ablate(base, 4),
                                         ModelConfig::single_modality_default()};
    for (const auto& cfg : variants) {
        INFO("variant " << variant_name(cfg.variant));
        Rng rng(33);
        Model<float> model(cfg, rng);
        Tape<float> tape;
        Rng fw(34);
        std::vector<ParamBinding<float>> binds;
        LayerContext<float> ctx{tape, Mode::train, fw, &binds};
        Rng data(35);
        auto fr = model.run(ctx, tape.leaf(random_batch<float>(cfg, 4, data)));
        std::vector<int> labels{0, 1, 0, 1};
        auto loss = cross_entropy_logits(fr.logits, labels);
        REQUIRE(std::isfinite(loss.tensor()[0]));
        tape.backward(loss);
        for (auto& b : binds) {
            const auto& g = tape.grad(b.leaf);
            for (std::int64_t i = 0; i < g.size(); ++i) REQUIRE(std::isfinite(g[i]));
        }
    }
}

TEST_CASE("model: config validation", "[model]") {
    ModelConfig bad;
    bad.spatial_kernel = 27;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);

    ModelConfig pool_too_big;
    pool_too_big.pool_size = 147;  // post-concat length is 146
    REQUIRE_THROWS_AS(pool_too_big.validate(), std::invalid_argument);

    // removing fusion block 2 removes the pooling constraint
    ModelConfig no_pool = ablate(ModelConfig{}, 4);
    no_pool.pool_size = 147;
    REQUIRE_NOTHROW(no_pool.validate());
}

TEST_CASE("serialize: bit-exact round trip", "[model][serialize]") {
    namespace fs = std::filesystem;
    const auto path = (fs::temp_directory_path() / "absnet_roundtrip.absn").string();

    Rng rng(77);
    ModelConfig cfg;
    Model<float> a(cfg, rng);
    save_model(a, path);

    Rng rng2(99);  // different init, to prove load overwrites
    Model<float> b(cfg, rng2);
    load_model(b, path);

    auto pa = a.params();
    auto pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->name == pb[i]->name);
        REQUIRE(pa[i]->value == pb[i]->value);
    }
    fs::remove(path);
}

TEST_CASE("serialize: rejects junk and mismatches", "[model][serialize]") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    Rng rng(1);
    ModelConfig cfg;
    Model<float> model(cfg, rng);

    const auto bad_magic = (dir / "absnet_badmagic.absn").string();
    {
        std::ofstream os(bad_magic, std::ios::binary);
        os << "NOPE1234";
    }
    REQUIRE_THROWS_WITH(load_model(model, bad_magic),
                        Catch::Matchers::ContainsSubstring("magic"));
    fs::remove(bad_magic);

    // a different architecture's blob must not load
    const auto other = (dir / "absnet_other.absn").string();
    Model<float> small(ablate(cfg, 1), rng);
    save_model(small, other);
    REQUIRE_THROWS_AS(load_model(model, other), std::runtime_error);
    fs::remove(other);

    REQUIRE_THROWS_AS(load_model(model, (dir / "absnet_missing.absn").string()),
                      std::runtime_error);
}
