#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "absolutenet/ops.hpp"
#include "absolutenet/rng.hpp"
#include "absolutenet/tape.hpp"
#include "absolutenet/tensor.hpp"

namespace absnet {

enum class Mode { train, infer };

/// A named parameter tensor. Moving statistics are flagged non-trainable and
/// are skipped by the optimizer but still serialized.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
};

template <typename T>
struct ParamBinding {
    Param<T>* param;
    Value<T> leaf;
};

/// Weighted feature-statistics accumulator, keyed by layer id. Used to
/// re-estimate batch-norm moving statistics exactly over a dataset.
template <typename T>
struct BnStatsAccum {
    struct Entry {
        Tensor<T> mean_sum;  // sum of positions * batch mean
        Tensor<T> m2_sum;    // sum of positions * batch E[x^2]
        double weight = 0;
    };
    std::map<std::string, Entry> entries;
};

/// Per-forward state. Layers bind their parameters as tape leaves through
/// this so the training loop can pair each parameter with its gradient.
template <typename T>
struct LayerContext {
    Tape<T>& tape;
    Mode mode;
    Rng& rng;  // consumed by dropout masks only
    std::vector<ParamBinding<T>>* bindings = nullptr;
    BnStatsAccum<T>* bn_stats = nullptr;  // set: collect stats, skip momentum updates

    Value<T> bind(Param<T>& p) {
        Value<T> leaf = tape.leaf(p.value, true);
        if (bindings) bindings->push_back({&p, leaf});
        return leaf;
    }
};

/// Glorot-uniform initialization: U(-lim, lim), lim = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& w, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::int64_t i = 0; i < w.size(); ++i)
        w[i] = static_cast<T>(rng.uniform(-lim, lim));
}

/// Base layer: parameters plus a forward rule. Output shapes are pure
/// functions of input shapes (checked before any numeric work) and are
/// expressed per sample, without the batch axis.
template <typename T>
class Layer {
public:
    explicit Layer(std::string display_name, std::string id)
        : display_name_(std::move(display_name)), id_(std::move(id)) {}
    virtual ~Layer() = default;

    const std::string& display_name() const { return display_name_; }
    const std::string& id() const { return id_; }

    virtual Value<T> forward(LayerContext<T>& ctx, Value<T> x) = 0;
    virtual Shape output_shape(const Shape& in) const = 0;
    virtual std::vector<Param<T>*> params() { return {}; }
    virtual void init(Rng&) {}

    std::int64_t param_count() {
        std::int64_t n = 0;
        for (auto* p : params()) n += p->value.size();
        return n;
    }
    std::int64_t trainable_param_count() {
        std::int64_t n = 0;
        for (auto* p : params())
            if (p->trainable) n += p->value.size();
        return n;
    }

private:
    std::string display_name_;
    std::string id_;
};

/// 2D convolution layer, no bias.
template <typename T>
class Conv2D : public Layer<T> {
public:
    Conv2D(std::string display_name, std::string id, std::int64_t k_ch, std::int64_t k_t,
           std::int64_t c_in, std::int64_t c_out, Padding padding)
        : Layer<T>(std::move(display_name), std::move(id)),
          padding_(padding),
          kernel_{this->id() + ".kernel", Tensor<T>({k_ch, k_t, c_in, c_out}), true} {}

    void init(Rng& rng) override {
        const auto& s = kernel_.value.shape();
        glorot_uniform(kernel_.value, s[0] * s[1] * s[2], s[0] * s[1] * s[3], rng);
    }

    Value<T> forward(LayerContext<T>& ctx, Value<T> x) override {
        return conv2d(x, ctx.bind(kernel_), padding_);
    }

    Shape output_shape(const Shape& in) const override {
        const auto& k = kernel_.value.shape();
        const auto geo = detail::conv_geometry("conv2d", in, k[0], k[1], k[2], k[3], padding_);
        return detail::conv_out_shape(geo, geo.cout);
    }

    std::vector<Param<T>*> params() override { return {&kernel_}; }

private:
    Padding padding_;
    Param<T> kernel_;
};

/// Depthwise + pointwise convolution, no bias.
template <typename T>
class SeparableConv2D : public Layer<T> {
public:
    SeparableConv2D(std::string display_name, std::string id, std::int64_t k_ch, std::int64_t k_t,
                    std::int64_t c_in, std::int64_t c_out, Padding padding)
        : Layer<T>(std::move(display_name), std::move(id)),
          padding_(padding),
          depthwise_{this->id() + ".depthwise", Tensor<T>({k_ch, k_t, c_in}), true},
          pointwise_{this->id() + ".pointwise", Tensor<T>({c_in, c_out}), true} {}

    void init(Rng& rng) override {
        const auto& d = depthwise_.value.shape();
        glorot_uniform(depthwise_.value, d[0] * d[1], d[0] * d[1], rng);
        const auto& p = pointwise_.value.shape();
        glorot_uniform(pointwise_.value, p[0], p[1], rng);
    }

    Value<T> forward(LayerContext<T>& ctx, Value<T> x) override {
        return separable_conv2d(x, ctx.bind(depthwise_), ctx.bind(pointwise_), padding_);
    }

    Shape output_shape(const Shape& in) const override {
        const auto& d = depthwise_.value.shape();
        const auto geo =
            detail::conv_geometry("separable_conv2d", in, d[0], d[1], d[2], d[2], padding_);
        return detail::conv_out_shape(geo, pointwise_.value.extent(1));
    }

    std::vector<Param<T>*> params() override { return {&depthwise_, &pointwise_}; }

private:
    Padding padding_;
    Param<T> depthwise_;
    Param<T> pointwise_;
};

/// Normalizes features to zero mean / unit variance per position; 2F params.
template <typename T>
class LayerNorm : public Layer<T> {
public:
    LayerNorm(std::string display_name, std::string id, std::int64_t features, T eps = T{1e-5})
        : Layer<T>(std::move(display_name), std::move(id)),
          eps_(eps),
          gamma_{this->id() + ".gamma", Tensor<T>::ones({features}), true},
          beta_{this->id() + ".beta", Tensor<T>::zeros({features}), true} {}

    Value<T> forward(LayerContext<T>& ctx, Value<T> x) override {
        return layer_norm(x, ctx.bind(gamma_), ctx.bind(beta_), eps_);
    }

    Shape output_shape(const Shape& in) const override {
        detail::require(!in.empty() && in.back() == gamma_.value.extent(0),
                        "layer_norm: feature extent of " + shape_str(in) + " != " +
                            std::to_string(gamma_.value.extent(0)));
        return in;
    }

    std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }

private:
    T eps_;
    Param<T> gamma_;
    Param<T> beta_;
};

/// Batch normalization over the feature axis: 2F trainable + 2F moving.
/// Training mode uses batch statistics and updates the moving averages as
/// moving <- momentum * moving + (1 - momentum) * batch.
template <typename T>
class BatchNorm : public Layer<T> {
public:
    BatchNorm(std::string display_name, std::string id, std::int64_t features,
              T momentum = T{0.99}, T eps = T{1e-5})
        : Layer<T>(std::move(display_name), std::move(id)),
          momentum_(momentum),
          eps_(eps),
          gamma_{this->id() + ".gamma", Tensor<T>::ones({features}), true},
          beta_{this->id() + ".beta", Tensor<T>::zeros({features}), true},
          moving_mean_{this->id() + ".moving_mean", Tensor<T>::zeros({features}), false},
          moving_var_{this->id() + ".moving_var", Tensor<T>::ones({features}), false} {}

    Value<T> forward(LayerContext<T>& ctx, Value<T> x) override {
        Value<T> g = ctx.bind(gamma_);
        Value<T> b = ctx.bind(beta_);
        if (ctx.mode == Mode::infer)
            return batch_norm_infer(x, g, b, moving_mean_.value, moving_var_.value, eps_);
        detail::require(x.shape().size() >= 1 && x.shape()[0] >= 2,
                        "batch_norm: train mode needs batch size >= 2");
        Tensor<T> bm, bv;
        Value<T> y = batch_norm_train(x, g, b, eps_, &bm, &bv);
        const std::int64_t F = bm.size();
        if (ctx.bn_stats) {
            auto& e = ctx.bn_stats->entries[this->id()];
            if (e.weight == 0) {
                e.mean_sum = Tensor<T>::zeros({F});
                e.m2_sum = Tensor<T>::zeros({F});
            }
            const T w = static_cast<T>(x.tensor().size() / F);
            for (std::int64_t f = 0; f < F; ++f) {
                e.mean_sum[f] += w * bm[f];
                e.m2_sum[f] += w * (bv[f] + bm[f] * bm[f]);
            }
            e.weight += static_cast<double>(w);
        } else {
            for (std::int64_t f = 0; f < F; ++f) {
                moving_mean_.value[f] =
                    momentum_ * moving_mean_.value[f] + (T{1} - momentum_) * bm[f];
                moving_var_.value[f] =
                    momentum_ * moving_var_.value[f] + (T{1} - momentum_) * bv[f];
            }
        }
        return y;
    }

    /// Overwrite the moving statistics (exact re-estimation path).
    void set_moving(const Tensor<T>& mean, const Tensor<T>& var) {
        detail::require(mean.size() == moving_mean_.value.size() &&
                            var.size() == moving_var_.value.size(),
                        "batch_norm: set_moving size mismatch");
        moving_mean_.value = mean;
        moving_var_.value = var;
    }

    Shape output_shape(const Shape& in) const override {
        detail::require(!in.empty() && in.back() == gamma_.value.extent(0),
                        "batch_norm: feature extent of " + shape_str(in) + " != " +
                            std::to_string(gamma_.value.extent(0)));
        return in;
    }

    std::vector<Param<T>*> params() override {
        return {&gamma_, &beta_, &moving_mean_, &moving_var_};
    }

private:
    T momentum_;
    T eps_;
    Param<T> gamma_;
    Param<T> beta_;
    Param<T> moving_mean_;
    Param<T> moving_var_;
};

enum class ActKind { square, absolute, log_abs };

/// Parameter-free symmetric activation: f(-x) = f(x) for all three kinds.
template <typename T>
class Activation : public Layer<T> {
public:
    Activation(std::string display_name, std::string id, ActKind kind, T log_eps = T{1e-7})
        : Layer<T>(std::move(display_name), std::move(id)), kind_(kind), log_eps_(log_eps) {}

    Value<T> forward(LayerContext<T>&, Value<T> x) override {
        switch (kind_) {
            case ActKind::square: return square(x);
            case ActKind::absolute: return abs(x);
            case ActKind::log_abs: return log_abs_eps(x, log_eps_);
        }
        throw std::logic_error("activation: unknown kind");
    }

    Shape output_shape(const Shape& in) const override { return in; }

    ActKind kind() const { return kind_; }

private:
    ActKind kind_;
    T log_eps_;
};

/// Average pooling along the temporal axis, window (1, P), stride (1, S).
template <typename T>
class AvgPool : public Layer<T> {
public:
    AvgPool(std::string display_name, std::string id, std::int64_t pool, std::int64_t stride)
        : Layer<T>(std::move(display_name), std::move(id)), pool_(pool), stride_(stride) {}

    Value<T> forward(LayerContext<T>&, Value<T> x) override {
        return avg_pool(x, pool_, stride_);
    }

    Shape output_shape(const Shape& in) const override {
        detail::require(in.size() >= 2, "avg_pool: input rank must be >= 2");
        const std::int64_t tlen = in[in.size() - 2];
        detail::require(pool_ <= tlen, "avg_pool: window " + std::to_string(pool_) +
                                           " exceeds temporal extent " + std::to_string(tlen));
        Shape out = in;
        out[in.size() - 2] = (tlen - pool_) / stride_ + 1;
        return out;
    }

private:
    std::int64_t pool_;
    std::int64_t stride_;
};

enum class DenseAct { none, absolute, softmax };

/// Affine map on the last axis, applied independently at every leading-axis
/// position, with an optional fused activation.
template <typename T>
class Dense : public Layer<T> {
public:
    Dense(std::string display_name, std::string id, std::int64_t f_in, std::int64_t f_out,
          DenseAct act)
        : Layer<T>(std::move(display_name), std::move(id)),
          act_(act),
          weight_{this->id() + ".weight", Tensor<T>({f_in, f_out}), true},
          bias_{this->id() + ".bias", Tensor<T>::zeros({f_out}), true} {}

    void init(Rng& rng) override {
        glorot_uniform(weight_.value, weight_.value.extent(0), weight_.value.extent(1), rng);
    }

    Value<T> forward(LayerContext<T>& ctx, Value<T> x) override {
        return activate(pre_activation(ctx, x));
    }

    /// Pre-activation output, for losses that want raw scores.
    Value<T> pre_activation(LayerContext<T>& ctx, Value<T> x) {
        return bias_add(last_axis_matmul(x, ctx.bind(weight_)), ctx.bind(bias_));
    }

    Value<T> activate(Value<T> pre) {
        switch (act_) {
            case DenseAct::none: return pre;
            case DenseAct::absolute: return abs(pre);
            case DenseAct::softmax: return softmax(pre);
        }
        throw std::logic_error("dense: unknown activation");
    }

    Shape output_shape(const Shape& in) const override {
        detail::require(!in.empty() && in.back() == weight_.value.extent(0),
                        "dense: trailing extent of " + shape_str(in) + " != " +
                            std::to_string(weight_.value.extent(0)));
        Shape out = in;
        out.back() = weight_.value.extent(1);
        return out;
    }

    std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

private:
    DenseAct act_;
    Param<T> weight_;
    Param<T> bias_;
};

/// Inverted dropout; identity in inference mode and at rate 0.
template <typename T>
class Dropout : public Layer<T> {
public:
    Dropout(std::string display_name, std::string id, double rate)
        : Layer<T>(std::move(display_name), std::move(id)), rate_(rate) {
        detail::require(rate >= 0.0 && rate < 1.0,
                        "dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }

    Value<T> forward(LayerContext<T>& ctx, Value<T> x) override {
        if (ctx.mode == Mode::infer) return x;
        return dropout(x, rate_, ctx.rng);
    }

    Shape output_shape(const Shape& in) const override { return in; }

private:
    double rate_;
};

/// Collapses everything after the batch axis into one vector.
template <typename T>
class Flatten : public Layer<T> {
public:
    Flatten(std::string display_name, std::string id)
        : Layer<T>(std::move(display_name), std::move(id)) {}

    Value<T> forward(LayerContext<T>&, Value<T> x) override {
        const std::int64_t batch = x.shape()[0];
        return reshape(x, Shape{batch, x.tensor().size() / batch});
    }

    Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }
};

}  // namespace absnet
