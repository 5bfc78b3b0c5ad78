#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "absolutenet/model.hpp"
#include "absolutenet/ops.hpp"
#include "absolutenet/rng.hpp"

namespace absnet::gradcheck {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool pass = false;
};

/// Relative error with a floor so near-zero gradients compare sensibly
/// against finite-difference noise.
inline double rel_err(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-3});
    return std::fabs(a - b) / denom;
}

/// Rebuilds a scalar expression from leaf tensors; must be a pure function of
/// them (internal randomness has to be re-seeded identically on every call).
using Builder = std::function<Value<double>(Tape<double>&, std::vector<Value<double>>&)>;

/// Central finite differences (step h) on every element of every input
/// against one reverse pass, all in 64-bit.
inline CheckResult check(std::string name, const std::vector<Tensor<double>>& inputs,
                         const Builder& f, double tol = 1e-4, double h = 1e-5) {
    Tape<double> tape;
    std::vector<Value<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& in : inputs) leaves.push_back(tape.leaf(in, true));
    Value<double> out = f(tape, leaves);
    tape.backward(out);
    std::vector<Tensor<double>> grads;
    grads.reserve(leaves.size());
    for (auto& l : leaves) grads.push_back(tape.grad(l));

    auto eval = [&](std::size_t which, std::int64_t elem, double delta) {
        std::vector<Tensor<double>> pert = inputs;
        pert[which][elem] += delta;
        Tape<double> t2;
        std::vector<Value<double>> lv;
        lv.reserve(pert.size());
        for (auto& in : pert) lv.push_back(t2.leaf(in, false));
        return f(t2, lv).tensor()[0];
    };

    CheckResult res{std::move(name), 0.0, tol, false};
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::int64_t e = 0; e < inputs[i].size(); ++e) {
            const double fd = (eval(i, e, h) - eval(i, e, -h)) / (2 * h);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(fd, grads[i][e]));
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

/// Same scheme for a whole model: differentiates the training loss w.r.t.
/// every trainable parameter and the input batch.
inline CheckResult check_model(std::string name, const ModelConfig& cfg, std::int64_t batch,
                               std::uint64_t seed, double tol = 1e-4, double h = 1e-5) {
    Rng init_rng(seed);
    Model<double> model(cfg, init_rng);
    Tensor<double> x({batch, cfg.input_channels, cfg.input_samples, 1});
    Rng data_rng = Rng::derive(seed, 1);
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = data_rng.normal(0.0, 1.0);
    std::vector<int> labels(static_cast<std::size_t>(batch));
    for (auto& y : labels) y = static_cast<int>(data_rng.uniform_int(0, cfg.classes - 1));

    // One reverse pass, grads captured per parameter. The dropout rng is
    // re-derived from the same stream on every forward so masks repeat.
    Tape<double> tape;
    Rng fwd_rng = Rng::derive(seed, 2);
    std::vector<ParamBinding<double>> bindings;
    LayerContext<double> ctx{tape, Mode::train, fwd_rng, &bindings};
    Value<double> xv = tape.leaf(x, true);
    auto fr = model.run(ctx, xv);
    Value<double> loss_v = cross_entropy_logits(fr.logits, labels);
    tape.backward(loss_v);

    auto forward_loss = [&]() {
        Tape<double> t2;
        Rng r2 = Rng::derive(seed, 2);
        LayerContext<double> c2{t2, Mode::train, r2, nullptr};
        Value<double> x2 = t2.leaf(x, false);
        auto f2 = model.run(c2, x2);
        return cross_entropy_logits(f2.logits, labels).tensor()[0];
    };
    const double f0 = forward_loss();

    // A perturbation can cross an abs/log kink somewhere inside the network;
    // there the central difference averages two one-sided slopes while the
    // reverse pass returns one of them. An element passes if the gradient
    // matches the central OR either one-sided difference.
    auto element_err = [&](double up, double down, double g) {
        const double central = rel_err((up - down) / (2 * h), g);
        const double right = rel_err((up - f0) / h, g);
        const double left = rel_err((f0 - down) / h, g);
        return std::min({central, right, left});
    };

    CheckResult res{std::move(name), 0.0, tol, false};
    for (auto& b : bindings) {
        if (!b.param->trainable) continue;
        Tensor<double> grad = tape.grad(b.leaf);
        Tensor<double>& v = b.param->value;
        for (std::int64_t e = 0; e < v.size(); ++e) {
            const double keep = v[e];
            v[e] = keep + h;
            const double up = forward_loss();
            v[e] = keep - h;
            const double down = forward_loss();
            v[e] = keep;
            res.max_rel_err = std::max(res.max_rel_err, element_err(up, down, grad[e]));
        }
    }
    {
        Tensor<double> gx = tape.grad(xv);
        for (std::int64_t e = 0; e < x.size(); ++e) {
            const double keep = x[e];
            x[e] = keep + h;
            const double up = forward_loss();
            x[e] = keep - h;
            const double down = forward_loss();
            x[e] = keep;
            res.max_rel_err = std::max(res.max_rel_err, element_err(up, down, gx[e]));
        }
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

namespace detail {

/// Random tensor with entries away from the abs/log kink: |x| in [0.1, 2].
inline Tensor<double> away_from_kink(const Shape& shape, Rng& rng) {
    Tensor<double> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const double mag = rng.uniform(0.1, 2.0);
        t[i] = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

inline Tensor<double> gaussian(const Shape& shape, Rng& rng, double sigma = 1.0) {
    Tensor<double> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, sigma);
    return t;
}

inline Tensor<double> positive(const Shape& shape, Rng& rng) {
    Tensor<double> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.2, 3.0);
    return t;
}

}  // namespace detail

/// Finite-difference verification of every primitive and composed layer.
/// `only` filters by substring; empty runs everything.
inline std::vector<CheckResult> standard_checks(std::uint64_t seed, double tol = 1e-4,
                                                const std::string& only = "") {
    std::vector<CheckResult> results;
    Rng rng(seed);

    auto want = [&only](const std::string& name) {
        return only.empty() || name.find(only) != std::string::npos;
    };

    // Projects a tensor output to a scalar through fixed random weights.
    auto projected = [](Tensor<double> r, std::function<Value<double>(
                                              Tape<double>&, std::vector<Value<double>>&)>
                                              op) {
        return [r = std::move(r), op = std::move(op)](Tape<double>& t,
                                                      std::vector<Value<double>>& in) {
            Value<double> y = op(t, in);
            return mean(mul(y, t.constant(r)));
        };
    };

    auto run = [&](const std::string& name, std::vector<Tensor<double>> inputs,
                   const Shape& out_shape,
                   std::function<Value<double>(Tape<double>&, std::vector<Value<double>>&)> op) {
        if (!want(name)) return;
        Tensor<double> r = detail::gaussian(out_shape, rng);
        results.push_back(check(name, inputs, projected(std::move(r), std::move(op)), tol));
    };
    auto run_scalar = [&](const std::string& name, std::vector<Tensor<double>> inputs,
                          Builder op) {
        if (!want(name)) return;
        results.push_back(check(name, inputs, std::move(op), tol));
    };

    const Shape s34{3, 4};
    run("add", {detail::gaussian(s34, rng), detail::gaussian(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) { return add(in[0], in[1]); });
    run("sub", {detail::gaussian(s34, rng), detail::gaussian(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) { return sub(in[0], in[1]); });
    run("mul", {detail::gaussian(s34, rng), detail::gaussian(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) { return mul(in[0], in[1]); });
    run("scalar_mul", {detail::gaussian(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) { return scalar_mul(in[0], 2.5); });
    run("square", {detail::gaussian(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) { return square(in[0]); });
    run("abs", {detail::away_from_kink(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) { return abs(in[0]); });
    run("log_abs_eps", {detail::away_from_kink(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) {
            return log_abs_eps(in[0], 1e-7);
        });
    run("exp", {detail::gaussian(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) { return exp(in[0]); });
    run("log", {detail::positive(s34, rng)}, s34,
        [](Tape<double>&, std::vector<Value<double>>& in) { return log(in[0]); });
    run_scalar("mean", {detail::gaussian(s34, rng)},
               [](Tape<double>&, std::vector<Value<double>>& in) { return mean(in[0]); });
    run_scalar("sum", {detail::gaussian(s34, rng)},
               [](Tape<double>&, std::vector<Value<double>>& in) { return sum(in[0]); });
    run_scalar("variance", {detail::gaussian(s34, rng)},
               [](Tape<double>&, std::vector<Value<double>>& in) { return variance(in[0]); });
    run("reshape", {detail::gaussian({2, 6}, rng)}, {3, 4},
        [](Tape<double>&, std::vector<Value<double>>& in) {
            return reshape(in[0], Shape{3, 4});
        });
    run("transpose", {detail::gaussian({2, 3, 4}, rng)}, {4, 2, 3},
        [](Tape<double>&, std::vector<Value<double>>& in) {
            return transpose(in[0], {2, 0, 1});
        });
    run("concat", {detail::gaussian({2, 3, 2}, rng), detail::gaussian({2, 5, 2}, rng)},
        {2, 8, 2}, [](Tape<double>&, std::vector<Value<double>>& in) {
            return concat(in[0], in[1], 1);
        });
    run("matmul", {detail::gaussian({3, 5}, rng), detail::gaussian({5, 4}, rng)}, {3, 4},
        [](Tape<double>&, std::vector<Value<double>>& in) { return matmul(in[0], in[1]); });
    run("last_axis_matmul", {detail::gaussian({2, 3, 5}, rng), detail::gaussian({5, 4}, rng)},
        {2, 3, 4},
        [](Tape<double>&, std::vector<Value<double>>& in) {
            return last_axis_matmul(in[0], in[1]);
        });
    run("bias_add", {detail::gaussian({3, 4}, rng), detail::gaussian({4}, rng)}, {3, 4},
        [](Tape<double>&, std::vector<Value<double>>& in) { return bias_add(in[0], in[1]); });

    run("conv2d_valid", {detail::gaussian({2, 5, 6, 3}, rng), detail::gaussian({2, 3, 3, 4}, rng)},
        {2, 4, 4, 4}, [](Tape<double>&, std::vector<Value<double>>& in) {
            return conv2d(in[0], in[1], Padding::valid);
        });
    run("conv2d_same", {detail::gaussian({5, 6, 3}, rng), detail::gaussian({2, 4, 3, 2}, rng)},
        {5, 6, 2}, [](Tape<double>&, std::vector<Value<double>>& in) {
            return conv2d(in[0], in[1], Padding::same);
        });
    run("depthwise_conv2d_valid",
        {detail::gaussian({2, 5, 6, 3}, rng), detail::gaussian({2, 3, 3}, rng)}, {2, 4, 4, 3},
        [](Tape<double>&, std::vector<Value<double>>& in) {
            return depthwise_conv2d(in[0], in[1], Padding::valid);
        });
    run("depthwise_conv2d_same",
        {detail::gaussian({5, 6, 3}, rng), detail::gaussian({1, 3, 3}, rng)}, {5, 6, 3},
        [](Tape<double>&, std::vector<Value<double>>& in) {
            return depthwise_conv2d(in[0], in[1], Padding::same);
        });
    run("separable_conv2d",
        {detail::gaussian({4, 6, 3}, rng), detail::gaussian({1, 3, 3}, rng),
         detail::gaussian({3, 5}, rng)},
        {4, 6, 5}, [](Tape<double>&, std::vector<Value<double>>& in) {
            return separable_conv2d(in[0], in[1], in[2], Padding::same);
        });
    run("avg_pool", {detail::gaussian({2, 1, 11, 3}, rng)}, {2, 1, 3, 3},
        [](Tape<double>&, std::vector<Value<double>>& in) { return avg_pool(in[0], 5, 3); });

    run("layer_norm",
        {detail::gaussian({3, 4, 6}, rng), detail::positive({6}, rng),
         detail::gaussian({6}, rng)},
        {3, 4, 6}, [](Tape<double>&, std::vector<Value<double>>& in) {
            return layer_norm(in[0], in[1], in[2], 1e-5);
        });
    run("batch_norm_train",
        {detail::gaussian({4, 3, 5}, rng), detail::positive({5}, rng),
         detail::gaussian({5}, rng)},
        {4, 3, 5}, [](Tape<double>&, std::vector<Value<double>>& in) {
            return batch_norm_train<double>(in[0], in[1], in[2], 1e-5, nullptr, nullptr);
        });
    {
        Tensor<double> mm = detail::gaussian({5}, rng, 0.3);
        Tensor<double> mv = detail::positive({5}, rng);
        run("batch_norm_infer",
            {detail::gaussian({4, 3, 5}, rng), detail::positive({5}, rng),
             detail::gaussian({5}, rng)},
            {4, 3, 5}, [mm, mv](Tape<double>&, std::vector<Value<double>>& in) {
                return batch_norm_infer(in[0], in[1], in[2], mm, mv, 1e-5);
            });
    }
    {
        const std::uint64_t mask_seed = rng.next_u64();
        run("dropout", {detail::gaussian({6, 5}, rng)}, {6, 5},
            [mask_seed](Tape<double>&, std::vector<Value<double>>& in) {
                Rng mask_rng(mask_seed);
                return dropout(in[0], 0.3, mask_rng);
            });
    }
    run("softmax", {detail::gaussian({4, 5}, rng)}, {4, 5},
        [](Tape<double>&, std::vector<Value<double>>& in) { return softmax(in[0]); });
    {
        std::vector<int> labels{0, 1, 1, 0};
        run_scalar("cross_entropy", {detail::gaussian({4, 2}, rng)},
                   [labels](Tape<double>&, std::vector<Value<double>>& in) {
                       return cross_entropy_logits(in[0], labels);
                   });
    }
    // Composed layers as they appear in the network head and streams.
    run("layer/dense_abs",
        {detail::gaussian({2, 3, 5}, rng), detail::gaussian({5, 2}, rng),
         detail::gaussian({2}, rng)},
        {2, 3, 2}, [](Tape<double>&, std::vector<Value<double>>& in) {
            return abs(bias_add(last_axis_matmul(in[0], in[1]), in[2]));
        });
    run("layer/conv_ln_square",
        {detail::gaussian({4, 6, 1}, rng), detail::gaussian({4, 1, 1, 3}, rng),
         detail::positive({3}, rng), detail::gaussian({3}, rng)},
        {1, 6, 3}, [](Tape<double>&, std::vector<Value<double>>& in) {
            return square(layer_norm(conv2d(in[0], in[1], Padding::valid), in[2], in[3], 1e-5));
        });

    if (want("model/full_tiny")) {
        ModelConfig tiny;
        tiny.input_channels = 4;
        tiny.spatial_kernel = 4;
        tiny.input_samples = 16;
        tiny.temporal_kernel = 3;
        tiny.st_spatial_filters = 3;
        tiny.st_temporal_filters = 4;
        tiny.ts_temporal_filters = 2;
        tiny.ts_spatial_filters = 4;
        tiny.separable_kernel = 3;
        tiny.separable_filters = 3;
        tiny.pool_size = 5;
        tiny.pool_stride = 3;
        tiny.dropout_rate = 0.2;
        // The composite check cannot steer activations away from the abs/log
        // kinks, so it gets the kink allowance (100x) and a smaller step
        // (narrower crossing band) instead of the primitive settings.
        results.push_back(
            check_model("model/full_tiny", tiny, 3, seed ^ 0x5eedULL, tol * 100, 1e-6));
    }
    return results;
}

/// Gradient of a pointwise primitive at one probe value (the CLI's --at).
inline double pointwise_grad(const std::string& op, double at, double eps = 1e-7) {
    Tape<double> tape;
    Value<double> x = tape.leaf(Tensor<double>::scalar(at), true);
    Value<double> y;
    if (op == "square")
        y = square(x);
    else if (op == "abs")
        y = abs(x);
    else if (op == "log_abs" || op == "log_abs_eps")
        y = log_abs_eps(x, eps);
    else if (op == "exp")
        y = exp(x);
    else if (op == "log")
        y = log(x);
    else
        throw std::invalid_argument("pointwise_grad: unknown op '" + op + "'");
    tape.backward(sum(y));
    return tape.grad(x)[0];
}

}  // namespace absnet::gradcheck
