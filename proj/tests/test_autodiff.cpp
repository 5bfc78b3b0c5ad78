#include <catch2/catch_amalgamated.hpp>

#include "absolutenet/gradcheck.hpp"
#include "absolutenet/ops.hpp"
#include "absolutenet/tape.hpp"
#include "oracles.hpp"

using namespace absnet;

namespace {

Tensor<double> random_tensor(const Shape& s, Rng& rng, double sigma = 1.0) {
    Tensor<double> t(s);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, sigma);
    return t;
}

}  // namespace

TEST_CASE("conv2d: published layer shapes", "[conv]") {
    Tape<float> tape;
    auto x = tape.leaf(Tensor<float>({28, 150, 1}));

    auto spatial = conv2d(x, tape.leaf(Tensor<float>({28, 1, 1, 40})), Padding::valid);
    REQUIRE(spatial.shape() == Shape{1, 150, 40});

    auto temporal = conv2d(x, tape.leaf(Tensor<float>({1, 5, 1, 20})), Padding::valid);
    REQUIRE(temporal.shape() == Shape{28, 146, 20});
}

TEST_CASE("conv2d: all-ones 2x2 valid gives 4", "[conv]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::ones({2, 2, 1}));
    auto k = tape.leaf(Tensor<double>::ones({2, 2, 1, 1}));
    auto y = conv2d(x, k, Padding::valid);
    REQUIRE(y.shape() == Shape{1, 1, 1});
    REQUIRE(y.tensor()[0] == 4.0);
}

TEST_CASE("conv2d: matches the naive reference", "[conv][oracle]") {
    Rng rng(21);
    for (bool same : {false, true}) {
        Tensor<double> x = random_tensor({6, 9, 3}, rng);
        Tensor<double> k = random_tensor({3, 4, 3, 5}, rng);
        Tape<double> tape;
        auto y = conv2d(tape.leaf(x), tape.leaf(k), same ? Padding::same : Padding::valid);
        auto ref = oracles::conv2d_reference(x, k, same);
        REQUIRE(y.shape() == ref.shape());
        for (std::int64_t i = 0; i < ref.size(); ++i)
            REQUIRE(y.tensor()[i] == Catch::Approx(ref[i]).margin(1e-12));
    }
}

TEST_CASE("conv2d: shape errors are descriptive", "[conv]") {
    Tape<float> tape;
    auto x = tape.leaf(Tensor<float>({4, 5, 2}));
    REQUIRE_THROWS_AS(conv2d(x, tape.leaf(Tensor<float>({5, 1, 2, 3})), Padding::valid),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(conv2d(x, tape.leaf(Tensor<float>({2, 2, 3, 3})), Padding::valid),
                      std::invalid_argument);
    REQUIRE_THROWS_WITH(conv2d(x, tape.leaf(Tensor<float>({2, 2, 3, 3})), Padding::valid),
                        Catch::Matchers::ContainsSubstring("feature count"));
}

TEST_CASE("conv2d: linearity", "[conv][property]") {
    Rng rng(31);
    Tensor<double> xa = random_tensor({5, 7, 2}, rng);
    Tensor<double> xb = random_tensor({5, 7, 2}, rng);
    Tensor<double> k = random_tensor({2, 3, 2, 4}, rng);
    const double a = 1.7, b = -0.6;

    Tensor<double> mix({5, 7, 2});
    for (std::int64_t i = 0; i < mix.size(); ++i) mix[i] = a * xa[i] + b * xb[i];

    Tape<double> tape;
    auto kk = tape.leaf(k);
    auto lhs = conv2d(tape.leaf(mix), kk, Padding::valid);
    auto ya = conv2d(tape.leaf(xa), kk, Padding::valid);
    auto yb = conv2d(tape.leaf(xb), kk, Padding::valid);
    for (std::int64_t i = 0; i < lhs.tensor().size(); ++i)
        REQUIRE(lhs.tensor()[i] ==
                Catch::Approx(a * ya.tensor()[i] + b * yb.tensor()[i]).margin(1e-5));
}

TEST_CASE("separable: parameter count and identity case", "[conv]") {
    // depthwise (1,3,120) + pointwise (120,10) -> 1,560 parameters
    REQUIRE(1 * 3 * 120 + 120 * 10 == 1560);

    // pointwise identity + depthwise all-ones (1,1,C) reproduces the input
    Rng rng(5);
    Tensor<double> x = random_tensor({2, 6, 3}, rng);
    Tensor<double> dw = Tensor<double>::ones({1, 1, 3});
    Tensor<double> pw({3, 3});
    for (int i = 0; i < 3; ++i) pw.at({i, i}) = 1.0;
    Tape<double> tape;
    auto y = separable_conv2d(tape.leaf(x), tape.leaf(dw), tape.leaf(pw), Padding::valid);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i)
        REQUIRE(y.tensor()[i] == Catch::Approx(x[i]).margin(1e-12));
}

TEST_CASE("separable: equals conv2d with the rank-1 expanded kernel", "[conv][oracle]") {
    Rng rng(8);
    Tensor<double> x = random_tensor({1, 8, 3}, rng);
    Tensor<double> dw = random_tensor({1, 3, 3}, rng);
    Tensor<double> pw = random_tensor({3, 5}, rng);
    Tensor<double> expanded = oracles::expand_separable(dw, pw);

    for (bool same : {false, true}) {
        Tape<double> tape;
        const Padding pad = same ? Padding::same : Padding::valid;
        auto sep = separable_conv2d(tape.leaf(x), tape.leaf(dw), tape.leaf(pw), pad);
        auto full = conv2d(tape.leaf(x), tape.leaf(expanded), pad);
        REQUIRE(sep.shape() == full.shape());
        for (std::int64_t i = 0; i < sep.tensor().size(); ++i)
            REQUIRE(sep.tensor()[i] == Catch::Approx(full.tensor()[i]).margin(1e-6));
    }
}

TEST_CASE("backward: d(x^2)/dx at 3 is 6", "[autodiff]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::scalar(3.0), true);
    auto y = square(x);
    tape.backward(y);
    REQUIRE(tape.grad(x)[0] == 6.0);
}

TEST_CASE("backward: |x| at 0 uses the zero subgradient", "[autodiff]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::scalar(0.0), true);
    auto y = abs(x);
    tape.backward(y);
    REQUIRE(tape.grad(x)[0] == 0.0);

    // one-sided slopes at +/-1e-3 bracket the kink: sign convention check
    auto slope_at = [](double v) {
        Tape<double> t;
        auto xx = t.leaf(Tensor<double>::scalar(v), true);
        t.backward(abs(xx));
        return t.grad(xx)[0];
    };
    REQUIRE(slope_at(1e-3) == 1.0);
    REQUIRE(slope_at(-1e-3) == -1.0);
}

TEST_CASE("backward: rejects non-scalar outputs", "[autodiff]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::ones({2, 2}), true);
    auto y = square(x);
    REQUIRE_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("backward: unused leaves get zero gradients", "[autodiff]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::scalar(2.0), true);
    auto unused = tape.leaf(Tensor<double>::ones({3}), true);
    tape.backward(square(x));
    const auto& g = tape.grad(unused);
    REQUIRE(g.shape() == Shape{3});
    for (std::int64_t i = 0; i < 3; ++i) REQUIRE(g[i] == 0.0);
}

TEST_CASE("backward: tape replay gives identical gradients", "[autodiff]") {
    Rng rng(17);
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({4, 5}, rng), true);
    auto w = tape.leaf(random_tensor({5, 3}, rng), true);
    auto loss = mean(square(matmul(x, w)));
    tape.backward(loss);
    Tensor<double> gx1 = tape.grad(x);
    Tensor<double> gw1 = tape.grad(w);
    tape.backward(loss);
    REQUIRE(tape.grad(x) == gx1);
    REQUIRE(tape.grad(w) == gw1);
}

TEST_CASE("every primitive passes central finite differences", "[autodiff][oracle]") {
    const auto results = gradcheck::standard_checks(20240809);
    REQUIRE(!results.empty());
    for (const auto& r : results) {
        INFO(r.name << " max_rel_err " << r.max_rel_err << " tol " << r.tolerance);
        CHECK(r.pass);
    }
}

TEST_CASE("elementwise values from the definitions", "[ops]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({3}, {-3.0, -2.0, 1.0}));
    REQUIRE(square(x).tensor()[0] == 9.0);
    REQUIRE(abs(x).tensor()[1] == 2.0);
    REQUIRE(log_abs_eps(x, 1e-7).tensor()[2] == Catch::Approx(1e-7).epsilon(1e-3));
}

TEST_CASE("log_abs_eps gradient convention", "[ops]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({3}, {-0.5, 0.0, 0.5}), true);
    tape.backward(sum(log_abs_eps(x, 1e-7)));
    const auto& g = tape.grad(x);
    REQUIRE(g[0] == Catch::Approx(-1.0 / (0.5 + 1e-7)));
    REQUIRE(g[1] == 0.0);
    REQUIRE(g[2] == Catch::Approx(1.0 / (0.5 + 1e-7)));
}

TEST_CASE("concat: shapes and errors", "[ops]") {
    Tape<float> tape;
    auto a = tape.leaf(Tensor<float>({1, 146, 60}));
    auto b = tape.leaf(Tensor<float>({1, 146, 60}));
    REQUIRE(concat(a, b, 2).shape() == Shape{1, 146, 120});
    REQUIRE_THROWS_AS(concat(a, b, 3), std::invalid_argument);
    auto c = tape.leaf(Tensor<float>({1, 100, 60}));
    REQUIRE_THROWS_AS(concat(a, c, 2), std::invalid_argument);
}

TEST_CASE("mean and variance reductions", "[ops]") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({4}, {1.0, 2.0, 3.0, 4.0}));
    REQUIRE(mean(x).tensor()[0] == 2.5);
    REQUIRE(variance(x).tensor()[0] == Catch::Approx(1.25));
}

TEST_CASE("transpose round trips through the inverse permutation", "[ops]") {
    Rng rng(12);
    Tensor<double> x = random_tensor({2, 3, 4}, rng);
    Tape<double> tape;
    auto v = tape.leaf(x);
    auto t = transpose(v, {2, 0, 1});
    REQUIRE(t.shape() == Shape{4, 2, 3});
    auto back = transpose(t, {1, 2, 0});
    REQUIRE(back.tensor() == x);
}

TEST_CASE("dropout: deterministic per rng state, mean preserved", "[ops]") {
    Tensor<double> ones = Tensor<double>::ones({1000000});
    Tape<double> tape;
    Rng rng(99);
    auto y = dropout(tape.leaf(ones), 0.3, rng);
    double sum = 0;
    for (std::int64_t i = 0; i < y.tensor().size(); ++i) sum += y.tensor()[i];
    REQUIRE(sum / 1e6 == Catch::Approx(1.0).margin(0.01));

    Tape<double> t2;
    Rng rng2(99);
    auto y2 = dropout(t2.leaf(ones), 0.3, rng2);
    REQUIRE(y.tensor() == y2.tensor());
}

TEST_CASE("determinism: identical seeds give bit-identical results", "[autodiff][property]") {
    auto run = [] {
        Rng rng(4242);
        Tape<float> tape;
        auto x = tape.leaf([&rng] {
            Tensor<float> t({3, 8, 2});
            for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
            return t;
        }(), true);
        auto k = tape.leaf([&rng] {
            Tensor<float> t({2, 3, 2, 4});
            for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
            return t;
        }(), true);
        auto loss = mean(square(conv2d(x, k, Padding::same)));
        tape.backward(loss);
        return std::pair<float, Tensor<float>>{loss.tensor()[0], tape.grad(k)};
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    REQUIRE(l1 == l2);
    REQUIRE(g1 == g2);
}
