#pragma once

#include <cstdint>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "absolutenet/layers.hpp"
#include "absolutenet/ops.hpp"
#include "absolutenet/rng.hpp"

namespace absnet {

/// Architecture variants: the full dual-stream network, the four reduced
/// networks used in the component studies, and the 14-channel single-modality
/// network.
enum class Variant {
    full,
    no_temporal_spatial,  // study 1: temporal-spatial stream removed
    no_spatial_temporal,  // study 2: spatial-temporal stream removed
    no_fusion1,           // study 3: separable conv block removed
    no_fusion2,           // study 4: pooling/log/dropout block removed
    single_modality,
};

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_temporal_spatial: return "no_temporal_spatial";
        case Variant::no_spatial_temporal: return "no_spatial_temporal";
        case Variant::no_fusion1: return "no_fusion1";
        case Variant::no_fusion2: return "no_fusion2";
        case Variant::single_modality: return "single_modality";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    for (Variant v : {Variant::full, Variant::no_temporal_spatial, Variant::no_spatial_temporal,
                      Variant::no_fusion1, Variant::no_fusion2, Variant::single_modality})
        if (s == variant_name(v)) return v;
    throw std::invalid_argument("unknown variant '" + s + "'");
}

/// Every architecture hyperparameter. Defaults reproduce the stock
/// dual-modality network.
struct ModelConfig {
    std::int64_t input_channels = 28;
    std::int64_t input_samples = 150;
    std::int64_t spatial_kernel = 28;  // full-channel width; equals input_channels
    std::int64_t temporal_kernel = 5;
    std::int64_t st_spatial_filters = 40;   // spatial-temporal stream, spatial conv
    std::int64_t st_temporal_filters = 60;  // spatial-temporal stream, temporal conv
    std::int64_t ts_temporal_filters = 20;  // temporal-spatial stream, temporal conv
    std::int64_t ts_spatial_filters = 60;   // temporal-spatial stream, spatial conv
    std::int64_t separable_kernel = 3;
    std::int64_t separable_filters = 10;
    std::int64_t pool_size = 25;
    std::int64_t pool_stride = 8;
    double dropout_rate = 0.3;
    double log_eps = 1e-7;
    std::int64_t classes = 2;
    Variant variant = Variant::full;

    static ModelConfig single_modality_default() {
        ModelConfig c;
        c.input_channels = 14;
        c.spatial_kernel = 14;
        c.variant = Variant::single_modality;
        return c;
    }

    /// Temporal length after the convolution streams (valid padding).
    std::int64_t post_concat_samples() const { return input_samples - temporal_kernel + 1; }

    /// Pooled temporal length under the no-padding formula.
    std::int64_t pooled_samples() const {
        return (post_concat_samples() - pool_size) / pool_stride + 1;
    }

    void validate() const {
        detail::require(input_channels >= 1 && input_samples >= 1, "config: extents must be >= 1");
        detail::require(spatial_kernel == input_channels,
                        "config: spatial_kernel (" + std::to_string(spatial_kernel) +
                            ") must equal input_channels (" + std::to_string(input_channels) +
                            ")");
        detail::require(temporal_kernel >= 1 && temporal_kernel <= input_samples,
                        "config: temporal_kernel out of range");
        detail::require(st_spatial_filters >= 1 && st_temporal_filters >= 1 &&
                            ts_temporal_filters >= 1 && ts_spatial_filters >= 1 &&
                            separable_kernel >= 1 && separable_filters >= 1,
                        "config: filter counts and kernels must be >= 1");
        detail::require(dropout_rate >= 0.0 && dropout_rate < 1.0,
                        "config: dropout_rate must be in [0, 1)");
        if (variant != Variant::no_fusion2) {
            detail::require(pool_size >= 1 && pool_size <= post_concat_samples(),
                            "config: pool_size (" + std::to_string(pool_size) +
                                ") exceeds post-concat temporal length (" +
                                std::to_string(post_concat_samples()) + ")");
            detail::require(pool_stride >= 1, "config: pool_stride must be >= 1");
        }
    }
};

/// Study ids 1-4 map onto the reduced variants.
inline ModelConfig ablate(ModelConfig base, int study) {
    detail::require(base.variant == Variant::full, "ablate: base config must be the full variant");
    switch (study) {
        case 1: base.variant = Variant::no_temporal_spatial; return base;
        case 2: base.variant = Variant::no_spatial_temporal; return base;
        case 3: base.variant = Variant::no_fusion1; return base;
        case 4: base.variant = Variant::no_fusion2; return base;
        default: throw std::invalid_argument("ablate: study must be 1..4");
    }
}

struct LayerReportRow {
    std::string block;
    std::string layer;
    Shape output;  // per-sample shape
    std::int64_t params = 0;
};

struct LayerReport {
    std::vector<LayerReportRow> rows;
    std::int64_t trainable = 0;
    std::int64_t total = 0;

    std::string to_text() const {
        std::ostringstream os;
        os << std::left << std::setw(20) << "Block" << std::setw(28) << "Layer" << std::setw(16)
           << "Output" << std::right << std::setw(10) << "Params" << '\n';
        for (const auto& r : rows)
            os << std::left << std::setw(20) << r.block << std::setw(28) << r.layer
               << std::setw(16) << shape_str(r.output) << std::right << std::setw(10) << r.params
               << '\n';
        os << "trainable_params " << trainable << '\n';
        os << "total_params " << total << '\n';
        return os.str();
    }

    /// Structured key/value records, one per row.
    std::vector<std::pair<std::string, std::string>> records() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            out.emplace_back("row" + std::to_string(i),
                             r.block + "|" + r.layer + "|" + shape_str(r.output) + "|" +
                                 std::to_string(r.params));
        }
        out.emplace_back("trainable_params", std::to_string(trainable));
        out.emplace_back("total_params", std::to_string(total));
        return out;
    }
};

/// AbsoluteNet: two convolutional streams fused by concatenation, a separable
/// convolution block, pooled log-compressed features and a two-stage dense
/// head. All tensors flow as (N, ch, t, C).
template <typename T>
class Model {
public:
    Model(ModelConfig cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        build();
        for_each_layer([&rng](Layer<T>& l) { l.init(rng); });
    }

    const ModelConfig& config() const { return cfg_; }

    /// Probability rows: softmax over the class scores, shape (N, classes).
    Value<T> forward(LayerContext<T>& ctx, Value<T> x) { return run(ctx, x).probs; }

    struct ForwardResult {
        Value<T> logits;  // pre-softmax scores
        Value<T> probs;
    };

    ForwardResult run(LayerContext<T>& ctx, Value<T> x) {
        check_input(x.shape());
        Value<T> h = trunk_input(ctx, x);
        for (auto& l : trunk_) h = l->forward(ctx, h);
        Value<T> logits = output_dense_->pre_activation(ctx, h);
        return {logits, output_dense_->activate(logits)};
    }

    /// Per-layer output dimensions and parameter counts plus totals. Shapes
    /// are per sample.
    LayerReport report() {
        LayerReport rep;
        Shape in = {cfg_.input_channels, cfg_.input_samples, 1};
        rep.rows.push_back({"Input", "Input", in, 0});
        Shape sa = in, sb = in;
        for (auto& l : branch_st_) {
            sa = l->output_shape(sa);
            rep.rows.push_back({"Spatial-Temporal", l->display_name(), sa, l->param_count()});
        }
        for (auto& l : branch_ts_) {
            sb = l->output_shape(sb);
            rep.rows.push_back({"Temporal-Spatial", l->display_name(), sb, l->param_count()});
        }
        Shape h;
        if (branch_st_.empty())
            h = sb;
        else if (branch_ts_.empty())
            h = sa;
        else {
            h = sa;
            h.back() = sa.back() + sb.back();
            rep.rows.push_back({"Concatenation", "Concatenation", h, 0});
        }
        for (auto& l : trunk_) {
            h = l->output_shape(h);
            rep.rows.push_back({block_of(l.get()), l->display_name(), h, l->param_count()});
        }
        h = output_dense_->output_shape(h);
        rep.rows.push_back(
            {"Classification Head", output_dense_->display_name(), h, output_dense_->param_count()});
        for_each_layer([&rep](Layer<T>& l) {
            rep.trainable += l.trainable_param_count();
            rep.total += l.param_count();
        });
        return rep;
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for_each_layer([&out](Layer<T>& l) {
            for (auto* p : l.params()) out.push_back(p);
        });
        return out;
    }

    std::int64_t trainable_params() {
        std::int64_t n = 0;
        for (auto* p : params())
            if (p->trainable) n += p->value.size();
        return n;
    }

    std::int64_t total_params() {
        std::int64_t n = 0;
        for (auto* p : params()) n += p->value.size();
        return n;
    }

    template <typename Fn>
    void for_each_layer(Fn&& fn) {
        for (auto& l : branch_st_) fn(*l);
        for (auto& l : branch_ts_) fn(*l);
        for (auto& l : trunk_) fn(*l);
        fn(*output_dense_);
    }

private:

    void check_input(const Shape& s) const {
        detail::require(s.size() == 4 && s[1] == cfg_.input_channels &&
                            s[2] == cfg_.input_samples && s[3] == 1,
                        "model: input must be (N, " + std::to_string(cfg_.input_channels) + ", " +
                            std::to_string(cfg_.input_samples) + ", 1), got " + shape_str(s));
    }

    Value<T> trunk_input(LayerContext<T>& ctx, Value<T> x) {
        if (branch_st_.empty() && branch_ts_.empty())
            throw std::logic_error("model: both streams absent");
        Value<T> a = x, b = x;
        for (auto& l : branch_st_) a = l->forward(ctx, a);
        for (auto& l : branch_ts_) b = l->forward(ctx, b);
        if (branch_st_.empty()) return b;
        if (branch_ts_.empty()) return a;
        return concat(a, b, 3);  // feature axis of (N, ch, t, C)
    }

    std::string block_of(const Layer<T>* l) const {
        const auto& id = l->id();
        if (id.rfind("concat.", 0) == 0) return "Concatenation";
        if (id.rfind("fusion1.", 0) == 0) return "Fusion Block 1";
        if (id.rfind("fusion2.", 0) == 0) return "Fusion Block 2";
        return "Classification Head";
    }

    void build() {
        const bool has_st = cfg_.variant != Variant::no_spatial_temporal;
        const bool has_ts = cfg_.variant != Variant::no_temporal_spatial;
        const bool has_fusion1 = cfg_.variant != Variant::no_fusion1;
        const bool has_fusion2 = cfg_.variant != Variant::no_fusion2;
        const Padding valid = Padding::valid;

        if (has_st) {
            branch_st_.push_back(std::make_unique<Conv2D<T>>(
                "Spatial Conv2D", "st.spatial_conv", cfg_.spatial_kernel, 1, 1,
                cfg_.st_spatial_filters, valid));
            branch_st_.push_back(std::make_unique<LayerNorm<T>>("Layer Normalization", "st.ln1",
                                                                cfg_.st_spatial_filters));
            branch_st_.push_back(std::make_unique<Activation<T>>("Squared Activation", "st.square",
                                                                 ActKind::square));
            branch_st_.push_back(std::make_unique<Conv2D<T>>(
                "Temporal Conv2D", "st.temporal_conv", 1, cfg_.temporal_kernel,
                cfg_.st_spatial_filters, cfg_.st_temporal_filters, valid));
            branch_st_.push_back(std::make_unique<LayerNorm<T>>("Layer Normalization", "st.ln2",
                                                                cfg_.st_temporal_filters));
            branch_st_.push_back(std::make_unique<Activation<T>>("Absolute Activation", "st.abs",
                                                                 ActKind::absolute));
        }
        if (has_ts) {
            branch_ts_.push_back(std::make_unique<Conv2D<T>>(
                "Temporal Conv2D", "ts.temporal_conv", 1, cfg_.temporal_kernel, 1,
                cfg_.ts_temporal_filters, valid));
            branch_ts_.push_back(std::make_unique<LayerNorm<T>>("Layer Normalization", "ts.ln1",
                                                                cfg_.ts_temporal_filters));
            branch_ts_.push_back(std::make_unique<Activation<T>>("Squared Activation", "ts.square",
                                                                 ActKind::square));
            branch_ts_.push_back(std::make_unique<Conv2D<T>>(
                "Spatial Conv2D", "ts.spatial_conv", cfg_.spatial_kernel, 1,
                cfg_.ts_temporal_filters, cfg_.ts_spatial_filters, valid));
            branch_ts_.push_back(std::make_unique<LayerNorm<T>>("Layer Normalization", "ts.ln2",
                                                                cfg_.ts_spatial_filters));
            branch_ts_.push_back(std::make_unique<Activation<T>>("Absolute Activation", "ts.abs",
                                                                 ActKind::absolute));
        }

        const std::int64_t concat_width = (has_st ? cfg_.st_temporal_filters : 0) +
                                          (has_ts ? cfg_.ts_spatial_filters : 0);
        trunk_.push_back(std::make_unique<BatchNorm<T>>("Batch Normalization", "concat.bn",
                                                        concat_width));

        std::int64_t head_features = concat_width;
        if (has_fusion1) {
            // The separable block must keep the temporal length, so it runs
            // with same padding regardless of the valid label elsewhere.
            trunk_.push_back(std::make_unique<SeparableConv2D<T>>(
                "Separable Conv2D", "fusion1.separable_conv", 1, cfg_.separable_kernel,
                concat_width, cfg_.separable_filters, Padding::same));
            trunk_.push_back(std::make_unique<LayerNorm<T>>("Layer Normalization", "fusion1.ln",
                                                            cfg_.separable_filters));
            trunk_.push_back(std::make_unique<Activation<T>>("Absolute Activation", "fusion1.abs",
                                                             ActKind::absolute));
            head_features = cfg_.separable_filters;
        }
        std::int64_t head_samples = cfg_.post_concat_samples();
        if (has_fusion2) {
            trunk_.push_back(std::make_unique<AvgPool<T>>("Average Pooling 2D", "fusion2.pool",
                                                          cfg_.pool_size, cfg_.pool_stride));
            trunk_.push_back(std::make_unique<Activation<T>>(
                "Logarithmic Activation", "fusion2.log", ActKind::log_abs,
                static_cast<T>(cfg_.log_eps)));
            std::ostringstream dn;
            dn << "Dropout (" << static_cast<int>(cfg_.dropout_rate * 100 + 0.5) << "%)";
            trunk_.push_back(
                std::make_unique<Dropout<T>>(dn.str(), "fusion2.dropout", cfg_.dropout_rate));
            head_samples = cfg_.pooled_samples();
        }

        trunk_.push_back(std::make_unique<Dense<T>>("Dense (Absolute Activation)", "head.dense1",
                                                    head_features, cfg_.classes,
                                                    DenseAct::absolute));
        trunk_.push_back(std::make_unique<Flatten<T>>("Flatten", "head.flatten"));
        output_dense_ = std::make_unique<Dense<T>>("Dense (Softmax)", "head.dense2",
                                                   head_samples * cfg_.classes, cfg_.classes,
                                                   DenseAct::softmax);
    }

    ModelConfig cfg_;
    std::vector<std::unique_ptr<Layer<T>>> branch_st_;
    std::vector<std::unique_ptr<Layer<T>>> branch_ts_;
    std::vector<std::unique_ptr<Layer<T>>> trunk_;
    std::unique_ptr<Dense<T>> output_dense_;
};

/// Parameter totals from config arithmetic alone (conv = k_ch*k_t*C_in*C_out,
/// layer norm = 2F, batch norm = 4F with 2F trainable, separable =
/// k_ch*k_t*C_in + C_in*C_out, dense = F_in*F_out + F_out). Lets callers
/// cross-check built models without touching layer objects.
struct ParamCounts {
    std::int64_t trainable = 0;
    std::int64_t total = 0;
};

inline ParamCounts closed_form_param_counts(const ModelConfig& cfg) {
    const bool has_st = cfg.variant != Variant::no_spatial_temporal;
    const bool has_ts = cfg.variant != Variant::no_temporal_spatial;
    const bool has_fusion1 = cfg.variant != Variant::no_fusion1;
    const bool has_fusion2 = cfg.variant != Variant::no_fusion2;
    ParamCounts c;
    auto add = [&c](std::int64_t trainable, std::int64_t frozen = 0) {
        c.trainable += trainable;
        c.total += trainable + frozen;
    };
    if (has_st) {
        add(cfg.spatial_kernel * 1 * 1 * cfg.st_spatial_filters);
        add(2 * cfg.st_spatial_filters);
        add(1 * cfg.temporal_kernel * cfg.st_spatial_filters * cfg.st_temporal_filters);
        add(2 * cfg.st_temporal_filters);
    }
    if (has_ts) {
        add(1 * cfg.temporal_kernel * 1 * cfg.ts_temporal_filters);
        add(2 * cfg.ts_temporal_filters);
        add(cfg.spatial_kernel * 1 * cfg.ts_temporal_filters * cfg.ts_spatial_filters);
        add(2 * cfg.ts_spatial_filters);
    }
    const std::int64_t width =
        (has_st ? cfg.st_temporal_filters : 0) + (has_ts ? cfg.ts_spatial_filters : 0);
    add(2 * width, 2 * width);  // batch norm: gamma/beta trainable, moving stats frozen
    std::int64_t head_features = width;
    if (has_fusion1) {
        add(1 * cfg.separable_kernel * width + width * cfg.separable_filters);
        add(2 * cfg.separable_filters);
        head_features = cfg.separable_filters;
    }
    const std::int64_t head_samples =
        has_fusion2 ? cfg.pooled_samples() : cfg.post_concat_samples();
    add(head_features * cfg.classes + cfg.classes);
    add(head_samples * cfg.classes * cfg.classes + cfg.classes);
    return c;
}

}  // namespace absnet
