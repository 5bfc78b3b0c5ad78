#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "absolutenet/rng.hpp"
#include "absolutenet/serialize.hpp"
#include "absolutenet/tensor.hpp"

namespace absnet {

// Fixed tensor contract: 28 channels (14 HbO2 then 14 HbR), 150 samples per
// trial at 10 Hz. Class 0 is the standard tone, class 1 the deviant.
inline constexpr std::int64_t kChannels = 28;
inline constexpr std::int64_t kHbChannels = 14;
inline constexpr std::int64_t kSamplesPerTrial = 150;
inline constexpr double kSampleRateHz = 10.0;

/// Auditory oddball timing: tone onsets every stimulus+isi seconds, rare
/// deviants among standards.
struct ParadigmConfig {
    int subjects = 9;
    int runs_per_subject = 6;
    int deviants_per_run = 20;
    int standards_min = 120;
    int standards_max = 140;
    double stimulus_ms = 500.0;
    double isi_ms = 2000.0;

    double onset_step_s() const { return (stimulus_ms + isi_ms) / 1000.0; }

    void validate() const {
        if (subjects < 1 || runs_per_subject < 1)
            throw std::invalid_argument("paradigm: subjects and runs must be positive");
        if (deviants_per_run < 0)
            throw std::invalid_argument("paradigm: deviants_per_run must be >= 0");
        if (standards_min < 0 || standards_max < standards_min)
            throw std::invalid_argument("paradigm: standards range invalid");
        if (stimulus_ms <= 0 || isi_ms < 0)
            throw std::invalid_argument("paradigm: timing must be positive");
    }
};

struct ToneEvent {
    double onset_s;
    int label;  // 0 standard, 1 deviant
};

/// One run's stimulus timeline. Deviants always have at least two standards
/// between them, and placements are resampled until the 3rd/4th-standard
/// balancing rule (below) has enough candidates.
inline std::vector<ToneEvent> gen_paradigm(const ParadigmConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.deviants_per_run;
    const int n_std = static_cast<int>(rng.uniform_int(cfg.standards_min, cfg.standards_max));

    auto assemble = [&](const std::vector<int>& gaps) {
        std::vector<ToneEvent> events;
        events.reserve(static_cast<std::size_t>(n_std + d));
        for (int i = 0; i <= d; ++i) {
            for (int s = 0; s < gaps[static_cast<std::size_t>(i)]; ++s)
                events.push_back({0.0, 0});
            if (i < d) events.push_back({0.0, 1});
        }
        for (std::size_t k = 0; k < events.size(); ++k)
            events[k].onset_s = static_cast<double>(k) * cfg.onset_step_s();
        return events;
    };

    if (d == 0) return assemble(std::vector<int>{n_std});

    const int interior = d - 1;
    if (n_std < 2 * interior)
        throw std::invalid_argument("paradigm: too few standards for minimum deviant spacing");

    for (int attempt = 0; attempt < 1000; ++attempt) {
        // gaps[0] before the first deviant, gaps[1..d-1] interior (>= 2),
        // gaps[d] trailing; extra standards spread uniformly.
        std::vector<int> gaps(static_cast<std::size_t>(d + 1), 0);
        for (int i = 1; i < d; ++i) gaps[static_cast<std::size_t>(i)] = 2;
        for (int r = n_std - 2 * interior; r > 0; --r)
            ++gaps[static_cast<std::size_t>(rng.uniform_int(0, d))];
        int candidates = 0;
        for (int i = 1; i < d; ++i) {
            if (gaps[static_cast<std::size_t>(i)] >= 3) ++candidates;
            if (gaps[static_cast<std::size_t>(i)] >= 4) ++candidates;
        }
        if (candidates >= d) return assemble(gaps);
    }
    throw std::runtime_error("paradigm: infeasible spacing for requested counts");
}

/// Standard trials occurring as the 3rd or 4th standard between two deviants;
/// exactly n_deviant of them are picked (seeded) to balance the classes.
inline std::vector<std::size_t> balance(const std::vector<ToneEvent>& events, Rng& rng) {
    std::vector<std::size_t> deviants;
    for (std::size_t i = 0; i < events.size(); ++i)
        if (events[i].label == 1) deviants.push_back(i);
    if (deviants.empty()) return {};

    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k + 1 < deviants.size(); ++k) {
        int pos = 0;
        for (std::size_t i = deviants[k] + 1; i < deviants[k + 1]; ++i) {
            if (events[i].label != 0) continue;
            ++pos;
            if (pos == 3 || pos == 4) candidates.push_back(i);
        }
    }
    if (candidates.size() < deviants.size())
        throw std::runtime_error("balance: only " + std::to_string(candidates.size()) +
                                 " eligible standards for " + std::to_string(deviants.size()) +
                                 " deviants");
    rng.shuffle(candidates.begin(), candidates.end());
    candidates.resize(deviants.size());
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

/// Hemodynamic response shape and noise model. The response rises to a peak,
/// undershoots and returns to baseline; HbR channels carry a negatively
/// scaled, slightly delayed copy of their HbO2 counterpart.
struct HrfConfig {
    double peak_time_s = 6.0;
    double undershoot_time_s = 12.0;
    double undershoot_ratio = 0.35;
    double class_amp[2] = {1.0, 1.5};        // standard, deviant response scale
    double roi_weight[3] = {0.5, 1.0, 1.0};  // frontal, left auditory, right auditory
    double hbr_ratio = -0.4;
    int hbr_delay_samples = 2;
    double noise_sigma = 0.3;
    struct Sinusoid {
        double freq_hz;
        double amp;
    };
    Sinusoid confounds[2] = {{0.1, 0.1}, {0.3, 0.05}};  // Mayer wave, respiration
    double trial_jitter = 0.1;  // multiplicative amplitude jitter, U(1-j, 1+j)

    void validate() const {
        if (peak_time_s <= 0 || undershoot_time_s <= peak_time_s)
            throw std::invalid_argument("hrf: need 0 < peak_time < undershoot_time");
        if (hbr_ratio >= 0) throw std::invalid_argument("hrf: hbr_ratio must be negative");
        if (noise_sigma < 0 || trial_jitter < 0)
            throw std::invalid_argument("hrf: noise and jitter must be non-negative");
        if (hbr_delay_samples < 0 || hbr_delay_samples >= kSamplesPerTrial)
            throw std::invalid_argument("hrf: hbr delay out of range");
    }

    /// Canonical response at time t (seconds), unit peak: a gamma-shaped rise
    /// minus a later gamma-shaped undershoot.
    double response(double t) const {
        if (t <= 0) return 0.0;
        auto bump = [](double t_, double peak, double sharp) {
            return std::pow(t_ / peak, sharp) * std::exp(-sharp * (t_ - peak) / peak);
        };
        return bump(t, peak_time_s, 6.0) - undershoot_ratio * bump(t, undershoot_time_s, 10.0);
    }
};

/// Region of interest per HbO2 channel: 0-4 frontal, 5-9 left auditory,
/// 10-13 right auditory.
inline int roi_of_channel(std::int64_t hb_channel) {
    if (hb_channel < 5) return 0;
    if (hb_channel < 10) return 1;
    return 2;
}

inline std::vector<std::string> default_channel_names() {
    std::vector<std::string> names;
    auto base = [](std::int64_t c) {
        if (c < 5) return "F" + std::to_string(c + 1);
        if (c < 10) return "LA" + std::to_string(c - 4);
        return "RA" + std::to_string(c - 9);
    };
    for (std::int64_t c = 0; c < kHbChannels; ++c) names.push_back(base(c) + "-HbO2");
    for (std::int64_t c = 0; c < kHbChannels; ++c) names.push_back(base(c) + "-HbR");
    return names;
}

struct TrialMeta {
    std::vector<int> subject;  // per trial
    std::vector<int> run;      // per trial
    double sample_rate_hz = kSampleRateHz;
    std::vector<std::string> channel_names = default_channel_names();
};

/// Labeled epochs: data (n_trials, channels, samples), one label byte per
/// trial, plus provenance metadata.
struct TrialSet {
    Tensor<float> data;  // default (size 0) when n_trials == 0
    std::vector<std::uint8_t> labels;
    TrialMeta meta;

    std::int64_t n_trials() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t n_channels() const { return data.size() ? data.extent(1) : kChannels; }
    std::int64_t n_samples() const { return data.size() ? data.extent(2) : kSamplesPerTrial; }
};

struct SynthConfig {
    ParadigmConfig paradigm;
    HrfConfig hrf;
    std::int64_t trials_per_class = 918;
    std::uint64_t seed = 42;
};

namespace detail_synth {

struct TrialDescriptor {
    int subject;
    int run;
    int label;
};

/// One epoch: response + confounds on the HbO2 channels, the delayed scaled
/// copy on HbR, then white noise everywhere. All draws come from `rng` in a
/// fixed order.
inline void synth_trial(const HrfConfig& hrf, int label, Rng& rng, float* out) {
    const double jitter =
        hrf.trial_jitter > 0 ? rng.uniform(1.0 - hrf.trial_jitter, 1.0 + hrf.trial_jitter) : 1.0;
    double phase[kHbChannels][2];
    for (std::int64_t c = 0; c < kHbChannels; ++c)
        for (int k = 0; k < 2; ++k)
            phase[c][k] = rng.uniform(0.0, 6.283185307179586476925286766559);

    double clean[kHbChannels][kSamplesPerTrial];
    for (std::int64_t c = 0; c < kHbChannels; ++c) {
        const double amp = hrf.class_amp[label] * hrf.roi_weight[roi_of_channel(c)] * jitter;
        for (std::int64_t s = 0; s < kSamplesPerTrial; ++s) {
            const double t = static_cast<double>(s) / kSampleRateHz;
            double v = amp * hrf.response(t);
            for (int k = 0; k < 2; ++k)
                v += hrf.confounds[k].amp *
                     std::sin(6.283185307179586476925286766559 * hrf.confounds[k].freq_hz * t +
                              phase[c][k]);
            clean[c][s] = v;
        }
    }
    // HbR rows copy the stored (already float-rounded) HbO2 rows so the
    // scaled-delayed-copy identity holds exactly on the emitted data.
    const int d = hrf.hbr_delay_samples;
    for (std::int64_t c = 0; c < kHbChannels; ++c)
        for (std::int64_t s = 0; s < kSamplesPerTrial; ++s)
            out[c * kSamplesPerTrial + s] = static_cast<float>(clean[c][s]);
    for (std::int64_t c = 0; c < kHbChannels; ++c)
        for (std::int64_t s = 0; s < kSamplesPerTrial; ++s) {
            const float delayed = s >= d ? out[c * kSamplesPerTrial + (s - d)] : 0.0f;
            out[(c + kHbChannels) * kSamplesPerTrial + s] =
                static_cast<float>(hrf.hbr_ratio * static_cast<double>(delayed));
        }
    if (hrf.noise_sigma > 0) {
        for (std::int64_t i = 0; i < kChannels * kSamplesPerTrial; ++i)
            out[i] = static_cast<float>(out[i] + rng.normal(0.0, hrf.noise_sigma));
    }
}

}  // namespace detail_synth

/// Full generation pipeline: per (subject, run) paradigm + balancing select
/// the trials, classes are subsampled to trials_per_class, then every epoch
/// is synthesized from its own derived stream. Pure function of the config.
inline TrialSet synth_epochs(const SynthConfig& cfg) {
    cfg.paradigm.validate();
    cfg.hrf.validate();
    if (cfg.trials_per_class < 1)
        throw std::invalid_argument("synth: trials_per_class must be >= 1");

    std::vector<detail_synth::TrialDescriptor> per_class[2];
    for (int subj = 0; subj < cfg.paradigm.subjects; ++subj) {
        for (int run = 0; run < cfg.paradigm.runs_per_subject; ++run) {
            const std::uint64_t stream =
                static_cast<std::uint64_t>(subj * cfg.paradigm.runs_per_subject + run);
            Rng run_rng = Rng::derive(cfg.seed, stream);
            const auto events = gen_paradigm(cfg.paradigm, run_rng);
            const auto picked = balance(events, run_rng);
            for (std::size_t i = 0; i < picked.size(); ++i)
                per_class[0].push_back({subj, run, 0});
            for (const auto& e : events)
                if (e.label == 1) per_class[1].push_back({subj, run, 1});
        }
    }

    for (int cls = 0; cls < 2; ++cls) {
        auto& v = per_class[cls];
        if (static_cast<std::int64_t>(v.size()) < cfg.trials_per_class)
            throw std::invalid_argument(
                "synth: paradigm yields only " + std::to_string(v.size()) + " class-" +
                std::to_string(cls) + " trials; requested " +
                std::to_string(cfg.trials_per_class) + " (raise subjects or runs)");
        // Seeded subsample stands in for the irreproducible visual rejection.
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
        Rng pick = Rng::derive(cfg.seed, 0xba1a000ull + static_cast<std::uint64_t>(cls));
        pick.shuffle(order.begin(), order.end());
        order.resize(static_cast<std::size_t>(cfg.trials_per_class));
        std::sort(order.begin(), order.end());
        std::vector<detail_synth::TrialDescriptor> kept;
        kept.reserve(order.size());
        for (auto i : order) kept.push_back(v[i]);
        v = std::move(kept);
    }

    // Interleave classes by (subject, run) order: 0,1,0,1,... keeps the file
    // layout stable and balanced.
    TrialSet set;
    const std::int64_t n = 2 * cfg.trials_per_class;
    set.data = Tensor<float>({n, kChannels, kSamplesPerTrial});
    set.labels.resize(static_cast<std::size_t>(n));
    set.meta.subject.resize(static_cast<std::size_t>(n));
    set.meta.run.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const int cls = static_cast<int>(i % 2);
        const auto& desc = per_class[cls][static_cast<std::size_t>(i / 2)];
        set.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(cls);
        set.meta.subject[static_cast<std::size_t>(i)] = desc.subject;
        set.meta.run[static_cast<std::size_t>(i)] = desc.run;
        Rng trial_rng = Rng::derive(cfg.seed, 0xe90c000ull + static_cast<std::uint64_t>(i));
        detail_synth::synth_trial(cfg.hrf, cls, trial_rng,
                                  set.data.data() + i * kChannels * kSamplesPerTrial);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Dataset file format
// ---------------------------------------------------------------------------
// Binary: magic "FNID", version u32 = 1, n_trials u32, n_channels u32,
// n_samples u32, sample_rate_hz f32, then trial-major f32 little-endian data,
// then one u8 label per trial. A human-readable sidecar at <path>.meta keeps
// the subject/run map, channel names and generator provenance.

inline constexpr char kDatasetMagic[4] = {'F', 'N', 'I', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(const TrialSet& set, const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& provenance = {}) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_dataset: cannot open '" + path + "'");
    const std::int64_t n = set.n_trials();
    const std::int64_t ch = set.n_channels();
    const std::int64_t sm = set.n_samples();
    os.write(kDatasetMagic, 4);
    blob::put_u32(os, kDatasetVersion);
    blob::put_u32(os, static_cast<std::uint32_t>(n));
    blob::put_u32(os, static_cast<std::uint32_t>(ch));
    blob::put_u32(os, static_cast<std::uint32_t>(sm));
    blob::put_f32(os, static_cast<float>(set.meta.sample_rate_hz));
    for (std::int64_t i = 0; i < n * ch * sm; ++i) blob::put_f32(os, set.data[i]);
    for (auto b : set.labels) os.put(static_cast<char>(b));
    if (!os) throw std::runtime_error("write_dataset: write failed on '" + path + "'");
    os.close();

    std::ofstream meta(path + ".meta");
    if (!meta) throw std::runtime_error("write_dataset: cannot open '" + path + ".meta'");
    meta << "# dataset sidecar (informational; the .fnid binary is authoritative)\n";
    meta << "n_trials = " << n << "\n";
    meta << "n_channels = " << ch << "\n";
    meta << "n_samples = " << sm << "\n";
    meta << "sample_rate_hz = " << set.meta.sample_rate_hz << "\n";
    for (const auto& [k, v] : provenance) meta << k << " = " << v << "\n";
    meta << "channels = ";
    for (std::size_t i = 0; i < set.meta.channel_names.size(); ++i)
        meta << (i ? "," : "") << set.meta.channel_names[i];
    meta << "\n";
    meta << "# trial,subject,run,label\n";
    for (std::int64_t i = 0; i < n; ++i) {
        const int subj = i < static_cast<std::int64_t>(set.meta.subject.size())
                             ? set.meta.subject[static_cast<std::size_t>(i)]
                             : -1;
        const int run = i < static_cast<std::int64_t>(set.meta.run.size())
                            ? set.meta.run[static_cast<std::size_t>(i)]
                            : -1;
        meta << "trial " << i << "," << subj << "," << run << ","
             << static_cast<int>(set.labels[static_cast<std::size_t>(i)]) << "\n";
    }
}

inline TrialSet read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_dataset: cannot open '" + path + "'");
    is.seekg(0, std::ios::end);
    const std::int64_t file_size = static_cast<std::int64_t>(is.tellg());
    is.seekg(0);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kDatasetMagic, 4) != 0)
        throw std::runtime_error("read_dataset: bad magic in '" + path + "'");
    const std::uint32_t version = blob::get_u32(is);
    if (version != kDatasetVersion)
        throw std::runtime_error("read_dataset: unsupported version " + std::to_string(version));
    const std::int64_t n = blob::get_u32(is);
    const std::int64_t ch = blob::get_u32(is);
    const std::int64_t sm = blob::get_u32(is);
    const float rate = blob::get_f32(is);

    const std::int64_t expected = 4 + 4 + 3 * 4 + 4 + n * ch * sm * 4 + n;
    if (file_size != expected)
        throw std::runtime_error("read_dataset: '" + path + "' is corrupt: header declares " +
                                 std::to_string(n) + " trials (" + std::to_string(expected) +
                                 " bytes) but the file has " + std::to_string(file_size));

    TrialSet set;
    set.meta.sample_rate_hz = rate;
    if (n > 0) {
        set.data = Tensor<float>({n, ch, sm});
        for (std::int64_t i = 0; i < n * ch * sm; ++i) set.data[i] = blob::get_f32(is);
        set.labels.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i)
            set.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(is.get());
        if (!is) throw std::runtime_error("read_dataset: truncated file '" + path + "'");
    }

    // Sidecar is optional on read; subject/run provenance defaults to -1.
    set.meta.subject.assign(static_cast<std::size_t>(n), -1);
    set.meta.run.assign(static_cast<std::size_t>(n), -1);
    std::ifstream meta(path + ".meta");
    if (meta) {
        std::string line;
        while (std::getline(meta, line)) {
            if (line.rfind("channels = ", 0) == 0) {
                set.meta.channel_names.clear();
                std::stringstream ss(line.substr(11));
                std::string name;
                while (std::getline(ss, name, ',')) set.meta.channel_names.push_back(name);
            } else if (line.rfind("trial ", 0) == 0) {
                std::int64_t idx;
                int subj, run, label;
                if (std::sscanf(line.c_str(), "trial %ld,%d,%d,%d", &idx, &subj, &run, &label) ==
                        4 &&
                    idx >= 0 && idx < n) {
                    set.meta.subject[static_cast<std::size_t>(idx)] = subj;
                    set.meta.run[static_cast<std::size_t>(idx)] = run;
                }
            }
        }
    }
    return set;
}

// ---------------------------------------------------------------------------
// Modality selection
// ---------------------------------------------------------------------------

enum class Modality { hbo2, hbr, both };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::hbo2: return "hbo2";
        case Modality::hbr: return "hbr";
        case Modality::both: return "both";
    }
    return "?";
}

inline Modality modality_from_name(const std::string& s) {
    if (s == "hbo2") return Modality::hbo2;
    if (s == "hbr") return Modality::hbr;
    if (s == "both") return Modality::both;
    throw std::invalid_argument("unknown modality '" + s + "' (expected hbo2|hbr|both)");
}

/// hbo2 keeps channels 0..13, hbr keeps 14..27, both is the identity.
inline TrialSet split_modality(const TrialSet& set, Modality which) {
    if (which == Modality::both) return set;
    if (set.n_channels() != kChannels)
        throw std::invalid_argument("split_modality: expected " + std::to_string(kChannels) +
                                    " channels, got " + std::to_string(set.n_channels()));
    const std::int64_t n = set.n_trials();
    const std::int64_t sm = set.n_samples();
    const std::int64_t first = which == Modality::hbo2 ? 0 : kHbChannels;

    TrialSet out;
    out.labels = set.labels;
    out.meta = set.meta;
    out.meta.channel_names.assign(
        set.meta.channel_names.begin() + static_cast<std::ptrdiff_t>(first),
        set.meta.channel_names.begin() + static_cast<std::ptrdiff_t>(first + kHbChannels));
    if (n == 0) return out;
    out.data = Tensor<float>({n, kHbChannels, sm});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < kHbChannels; ++c)
            std::memcpy(out.data.data() + (i * kHbChannels + c) * sm,
                        set.data.data() + (i * kChannels + first + c) * sm,
                        static_cast<std::size_t>(sm) * sizeof(float));
    return out;
}

}  // namespace absnet
