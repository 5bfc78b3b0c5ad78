#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "absolutenet/data.hpp"
#include "absolutenet/ga.hpp"
#include "absolutenet/model.hpp"
#include "absolutenet/train.hpp"

namespace absnet {

/// Plain `key = value` configuration text: one pair per line, '#' comments,
/// later keys win. Also the format of GA override files and manifests.
class ConfigMap {
public:
    ConfigMap() = default;

    static ConfigMap parse(std::istream& is) {
        ConfigMap cfg;
        std::string line;
        while (std::getline(is, line)) {
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (!key.empty()) cfg.values_[key] = value;
        }
        return cfg;
    }

    static ConfigMap load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
        return parse(is);
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set_f(const std::string& key, double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        values_[key] = buf;
    }
    void set_i(const std::string& key, std::int64_t v) { values_[key] = std::to_string(v); }

    std::string get(const std::string& key, const std::string& fallback = "") const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_f(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' is not a number: '" +
                                        it->second + "'");
        }
    }

    std::int64_t get_i(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            const std::int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' is not an integer: '" +
                                        it->second + "'");
        }
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

    void save(const std::string& path, const std::string& header = "") const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("config: cannot open '" + path + "' for writing");
        if (!header.empty()) os << "# " << header << "\n";
        for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

// Shared key names: GA override files, --config files and manifests all use
// these, so a best-genome export loads straight back into cv/train.

inline void apply_overrides(const ConfigMap& c, ModelConfig& m) {
    m.input_channels = c.get_i("input_channels", m.input_channels);
    m.input_samples = c.get_i("input_samples", m.input_samples);
    m.spatial_kernel = c.get_i("spatial_kernel", m.spatial_kernel);
    m.temporal_kernel = c.get_i("temporal_kernel", m.temporal_kernel);
    m.st_spatial_filters = c.get_i("st_spatial_filters", m.st_spatial_filters);
    m.st_temporal_filters = c.get_i("st_temporal_filters", m.st_temporal_filters);
    m.ts_temporal_filters = c.get_i("ts_temporal_filters", m.ts_temporal_filters);
    m.ts_spatial_filters = c.get_i("ts_spatial_filters", m.ts_spatial_filters);
    m.separable_kernel = c.get_i("separable_kernel", m.separable_kernel);
    m.separable_filters = c.get_i("separable_filters", m.separable_filters);
    m.pool_size = c.get_i("pool_size", m.pool_size);
    m.pool_stride = c.get_i("pool_stride", m.pool_stride);
    m.dropout_rate = c.get_f("dropout_rate", m.dropout_rate);
    m.log_eps = c.get_f("log_eps", m.log_eps);
    if (c.has("variant")) m.variant = variant_from_name(c.get("variant"));
}

inline void apply_overrides(const ConfigMap& c, TrainConfig& t) {
    t.learning_rate = c.get_f("learning_rate", t.learning_rate);
    t.epochs_select = static_cast<int>(c.get_i("epochs_select", t.epochs_select));
    t.epochs_retrain = static_cast<int>(c.get_i("epochs_retrain", t.epochs_retrain));
    t.batch_size = static_cast<int>(c.get_i("batch_size", t.batch_size));
    t.adam_beta1 = c.get_f("adam_beta1", t.adam_beta1);
    t.adam_beta2 = c.get_f("adam_beta2", t.adam_beta2);
    t.adam_eps = c.get_f("adam_eps", t.adam_eps);
    t.seed = static_cast<std::uint64_t>(c.get_i("seed", static_cast<std::int64_t>(t.seed)));
}

inline void apply_overrides(const ConfigMap& c, HrfConfig& h) {
    h.peak_time_s = c.get_f("hrf_peak_s", h.peak_time_s);
    h.undershoot_time_s = c.get_f("hrf_undershoot_s", h.undershoot_time_s);
    h.undershoot_ratio = c.get_f("hrf_undershoot_ratio", h.undershoot_ratio);
    h.class_amp[0] = c.get_f("standard_amp", h.class_amp[0]);
    h.class_amp[1] = c.get_f("deviant_amp", h.class_amp[1]);
    h.hbr_ratio = c.get_f("hbr_ratio", h.hbr_ratio);
    h.hbr_delay_samples = static_cast<int>(c.get_i("hbr_delay_samples", h.hbr_delay_samples));
    h.noise_sigma = c.get_f("noise_sigma", h.noise_sigma);
    h.confounds[0].amp = c.get_f("confound_slow_amp", h.confounds[0].amp);
    h.confounds[1].amp = c.get_f("confound_fast_amp", h.confounds[1].amp);
    h.trial_jitter = c.get_f("trial_jitter", h.trial_jitter);
}

inline ConfigMap genome_to_config(const Genome& g) {
    ConfigMap c;
    c.set_f("learning_rate", g.learning_rate);
    c.set_i("temporal_kernel", g.temporal_kernel);
    c.set_i("separable_kernel", g.separable_kernel);
    c.set_i("pool_size", g.pool_size);
    c.set_i("pool_stride", g.pool_stride);
    return c;
}

}  // namespace absnet
