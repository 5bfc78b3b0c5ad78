#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "absolutenet/model.hpp"
#include "absolutenet/rng.hpp"
#include "absolutenet/train.hpp"

namespace absnet {

/// Search-space bounds. The spatial kernel is not searched: it stays pinned
/// to the input channel count.
struct GeneBounds {
    double lr_lo = 1e-5, lr_hi = 1e-2;  // log-uniform
    int temporal_lo = 3, temporal_hi = 11;
    int separable_lo = 3, separable_hi = 7;
    int pool_size_lo = 5, pool_size_hi = 50;
    int pool_stride_lo = 1, pool_stride_hi = 16;

    void validate() const {
        if (lr_lo <= 0 || lr_hi < lr_lo) throw std::invalid_argument("ga: bad learning-rate bounds");
        if (temporal_hi < temporal_lo || separable_hi < separable_lo ||
            pool_size_hi < pool_size_lo || pool_stride_hi < pool_stride_lo)
            throw std::invalid_argument("ga: inverted gene bounds");
    }
};

struct Genome {
    double learning_rate = 9e-4;
    int temporal_kernel = 5;
    int separable_kernel = 3;
    int pool_size = 25;
    int pool_stride = 8;

    bool in_bounds(const GeneBounds& b) const {
        return learning_rate >= b.lr_lo && learning_rate <= b.lr_hi &&
               temporal_kernel >= b.temporal_lo && temporal_kernel <= b.temporal_hi &&
               separable_kernel >= b.separable_lo && separable_kernel <= b.separable_hi &&
               pool_size >= b.pool_size_lo && pool_size <= b.pool_size_hi &&
               pool_stride >= b.pool_stride_lo && pool_stride <= b.pool_stride_hi;
    }

    /// Canonical text form; doubles round-trip exactly (%.17g).
    std::string key() const {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.17g|%d|%d|%d|%d", learning_rate, temporal_kernel,
                      separable_kernel, pool_size, pool_stride);
        return buf;
    }

    ModelConfig apply_to(ModelConfig cfg) const {
        cfg.temporal_kernel = temporal_kernel;
        cfg.separable_kernel = separable_kernel;
        cfg.pool_size = pool_size;
        cfg.pool_stride = pool_stride;
        return cfg;
    }

    TrainConfig apply_to(TrainConfig cfg) const {
        cfg.learning_rate = learning_rate;
        return cfg;
    }
};

/// A genome is usable only if the resulting config is shape-consistent
/// (pool window fits the post-concat temporal length).
inline bool feasible(const Genome& g, const ModelConfig& base) {
    try {
        g.apply_to(base).validate();
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

struct GaConfig {
    int population = 8;       // paper scale: 100
    int generations = 3;      // paper scale: 30
    double mutation_rate = 0.1;
    int elite_count = 2;
    int fitness_epochs = 3;   // select-phase epochs per evaluation (desk budget)
    int threads = 1;
    std::uint64_t seed = 42;

    void validate() const {
        if (population < 2) throw std::invalid_argument("ga: population must be >= 2");
        if (generations < 1) throw std::invalid_argument("ga: generations must be >= 1");
        if (mutation_rate < 0 || mutation_rate > 1)
            throw std::invalid_argument("ga: mutation_rate must be in [0, 1]");
        if (elite_count < 1 || elite_count > population)
            throw std::invalid_argument("ga: elite_count must be in [1, population]");
        if (fitness_epochs < 1) throw std::invalid_argument("ga: fitness_epochs must be >= 1");
    }
};

inline Genome sample_genome(const GeneBounds& b, Rng& rng) {
    Genome g;
    g.learning_rate = rng.log_uniform(b.lr_lo, b.lr_hi);
    g.temporal_kernel = static_cast<int>(rng.uniform_int(b.temporal_lo, b.temporal_hi));
    g.separable_kernel = static_cast<int>(rng.uniform_int(b.separable_lo, b.separable_hi));
    g.pool_size = static_cast<int>(rng.uniform_int(b.pool_size_lo, b.pool_size_hi));
    g.pool_stride = static_cast<int>(rng.uniform_int(b.pool_stride_lo, b.pool_stride_hi));
    return g;
}

/// Uniform sampling within bounds (log-uniform for the learning rate);
/// infeasible draws are rejected and resampled.
inline std::vector<Genome> init_population(const GaConfig& cfg, const GeneBounds& bounds,
                                           const ModelConfig& base, Rng& rng) {
    cfg.validate();
    bounds.validate();
    std::vector<Genome> pop;
    pop.reserve(static_cast<std::size_t>(cfg.population));
    for (int i = 0; i < cfg.population; ++i) {
        Genome g;
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            g = sample_genome(bounds, rng);
            ok = feasible(g, base);
        }
        if (!ok) throw std::runtime_error("ga: empty feasible region for the given bounds");
        pop.push_back(g);
    }
    return pop;
}

/// Fitness = best validation loss on the first fold's 60/20 split, training
/// from a fresh initialization; lower is fitter. Infeasible or failing
/// genomes score +inf. The evaluation seed mixes the genome key, so identical
/// genomes score identically no matter where or when they are evaluated.
template <typename T>
double fitness(const Genome& genome, const TrialSet& set, const FoldSplit& fold0,
               const ModelConfig& base_model, const TrainConfig& base_train,
               const GaConfig& ga) {
    if (!feasible(genome, base_model)) return std::numeric_limits<double>::infinity();
    try {
        ModelConfig mcfg = genome.apply_to(base_model);
        TrainConfig tcfg = genome.apply_to(base_train);
        tcfg.epochs_select = ga.fitness_epochs;
        std::uint64_t h = ga.seed;
        for (char c : genome.key()) h = h * 1099511628211ull + static_cast<unsigned char>(c);
        tcfg.seed = h;
        Rng init_rng = Rng::derive(tcfg.seed, 0);
        Model<T> model(mcfg, init_rng);
        TrainReport rep = train(model, set, fold0.train, fold0.val, tcfg);
        return rep.best_val_loss;
    } catch (const std::exception&) {
        return std::numeric_limits<double>::infinity();
    }
}

namespace detail_ga {

/// Rank-weighted parent pick over a fitness-sorted population: weight of the
/// i-th best is (n - i).
inline std::size_t pick_parent(std::size_t n, Rng& rng) {
    const std::uint64_t total = n * (n + 1) / 2;
    std::uint64_t r = static_cast<std::uint64_t>(rng.uniform_int(1, static_cast<std::int64_t>(total)));
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t w = n - i;
        if (r <= w) return i;
        r -= w;
    }
    return n - 1;
}

inline int clamp_int(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

}  // namespace detail_ga

/// Elites copy through unchanged; the rest come from rank-selected parents by
/// uniform crossover, then per-gene mutation (Gaussian in log-space for the
/// learning rate with sigma = 10% of the range, +/-2 resampling for integer
/// genes), clamped to bounds and repaired to feasibility.
inline std::vector<Genome> evolve(const std::vector<Genome>& population,
                                  const std::vector<double>& fitnesses, const GaConfig& cfg,
                                  const GeneBounds& bounds, const ModelConfig& base, Rng& rng) {
    cfg.validate();
    if (population.size() != fitnesses.size() || population.size() < 2)
        throw std::invalid_argument("evolve: need an evaluated population of size >= 2");

    std::vector<std::size_t> order(population.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fitnesses[a] < fitnesses[b]; });

    std::vector<Genome> next;
    next.reserve(population.size());
    for (int e = 0; e < cfg.elite_count; ++e)
        next.push_back(population[order[static_cast<std::size_t>(e)]]);

    const double log_lo = std::log10(bounds.lr_lo);
    const double log_hi = std::log10(bounds.lr_hi);
    const double lr_sigma = 0.1 * (log_hi - log_lo);

    while (next.size() < population.size()) {
        const Genome& pa = population[order[detail_ga::pick_parent(order.size(), rng)]];
        const Genome& pb = population[order[detail_ga::pick_parent(order.size(), rng)]];
        Genome child;
        child.learning_rate = rng.bernoulli(0.5) ? pa.learning_rate : pb.learning_rate;
        child.temporal_kernel = rng.bernoulli(0.5) ? pa.temporal_kernel : pb.temporal_kernel;
        child.separable_kernel = rng.bernoulli(0.5) ? pa.separable_kernel : pb.separable_kernel;
        child.pool_size = rng.bernoulli(0.5) ? pa.pool_size : pb.pool_size;
        child.pool_stride = rng.bernoulli(0.5) ? pa.pool_stride : pb.pool_stride;

        if (rng.bernoulli(cfg.mutation_rate)) {
            const double lg = std::log10(child.learning_rate) + rng.normal(0.0, lr_sigma);
            child.learning_rate = std::pow(10.0, std::clamp(lg, log_lo, log_hi));
        }
        auto mutate_int = [&](int v, int lo, int hi) {
            if (!rng.bernoulli(cfg.mutation_rate)) return v;
            return detail_ga::clamp_int(v + static_cast<int>(rng.uniform_int(-2, 2)), lo, hi);
        };
        child.temporal_kernel = mutate_int(child.temporal_kernel, bounds.temporal_lo,
                                           bounds.temporal_hi);
        child.separable_kernel = mutate_int(child.separable_kernel, bounds.separable_lo,
                                            bounds.separable_hi);
        child.pool_size = mutate_int(child.pool_size, bounds.pool_size_lo, bounds.pool_size_hi);
        child.pool_stride = mutate_int(child.pool_stride, bounds.pool_stride_lo,
                                       bounds.pool_stride_hi);

        // Repair: shrink the pool window until the config is shape-feasible.
        while (!feasible(child, base) && child.pool_size > bounds.pool_size_lo)
            --child.pool_size;
        if (feasible(child, base)) next.push_back(child);
    }
    return next;
}

struct GaLogRow {
    int generation = 0;
    int individual = 0;
    Genome genome;
    double fitness = 0;
};

struct GaResult {
    std::vector<GaLogRow> log;            // population x generations, in order
    std::vector<double> best_trajectory;  // best fitness per generation
    Genome best;
    double best_fitness = std::numeric_limits<double>::infinity();
};

/// Full elitist search. Fitness evaluations are memoized by genome key and
/// may run on several threads; per-genome seeds keep the outcome identical
/// regardless of scheduling.
template <typename T>
GaResult ga_search(const TrialSet& set, const ModelConfig& base_model,
                   const TrainConfig& base_train, const GaConfig& cfg, const GeneBounds& bounds) {
    cfg.validate();
    bounds.validate();
    const auto folds = stratified_folds(set.labels, 5, Rng::derive(base_train.seed, 0xf01d));
    const FoldSplit& fold0 = folds[0];

    Rng rng = Rng::derive(cfg.seed, 0x6a);
    std::vector<Genome> pop = init_population(cfg, bounds, base_model, rng);

    GaResult result;
    std::map<std::string, double> memo;

    auto evaluate_population = [&](const std::vector<Genome>& genomes) {
        std::vector<double> fit(genomes.size(),
                                std::numeric_limits<double>::quiet_NaN());
        std::vector<std::size_t> todo;
        for (std::size_t i = 0; i < genomes.size(); ++i) {
            auto it = memo.find(genomes[i].key());
            if (it != memo.end())
                fit[i] = it->second;
            else
                todo.push_back(i);
        }
        // Duplicate keys inside one generation evaluate once.
        std::map<std::string, std::size_t> first_of;
        std::vector<std::size_t> unique;
        for (auto i : todo) {
            auto [it, inserted] = first_of.emplace(genomes[i].key(), i);
            if (inserted) unique.push_back(i);
        }
        auto eval_one = [&](std::size_t i) {
            fit[i] = fitness<T>(genomes[i], set, fold0, base_model, base_train, cfg);
        };
        const int threads = std::max(1, cfg.threads);
        for (std::size_t start = 0; start < unique.size();
             start += static_cast<std::size_t>(threads)) {
            std::vector<std::thread> pool;
            for (std::size_t j = start;
                 j < std::min(unique.size(), start + static_cast<std::size_t>(threads)); ++j)
                pool.emplace_back(eval_one, unique[j]);
            for (auto& th : pool) th.join();
        }
        for (auto i : todo) {
            if (std::isnan(fit[i])) fit[i] = fit[first_of[genomes[i].key()]];
            memo[genomes[i].key()] = fit[i];
        }
        return fit;
    };

    for (int gen = 0; gen < cfg.generations; ++gen) {
        std::vector<double> fit = evaluate_population(pop);
        double best_here = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pop.size(); ++i) {
            result.log.push_back({gen, static_cast<int>(i), pop[i], fit[i]});
            if (fit[i] < best_here) best_here = fit[i];
            if (fit[i] < result.best_fitness) {
                result.best_fitness = fit[i];
                result.best = pop[i];
            }
        }
        result.best_trajectory.push_back(result.best_fitness);
        if (gen + 1 < cfg.generations) pop = evolve(pop, fit, cfg, bounds, base_model, rng);
    }
    return result;
}

}  // namespace absnet
