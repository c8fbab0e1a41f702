#pragma once

// Evolutionary search over NEVs.
//
// Each epoch: rank the population by reward, merge into the elite archive
// (top `elite_archive` distinct genes), then build the next population from
// carried elites, mutants and crossover children of the top `breeders`, and
// random refills. Every gene lies inside the FLOPs window.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaprune/arch.hpp"
#include "metaprune/reward.hpp"
#include "metaprune/rng.hpp"

namespace metaprune::evosearch {

using arch::ArchTemplate;
using arch::IndexRange;
using arch::Nev;

class WindowInfeasible : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Gene {
    Nev nev;
    std::int64_t flops = 0;               // equals arch::flops_of(template, nev)
    std::optional<double> accuracy;       // filled by rank
    std::optional<double> reward;         // filled by rank

    static Gene make(const ArchTemplate& t, Nev nev);
};

struct SearchConfig {
    int population = 50;
    int elite_archive = 50;
    int breeders = 10;
    double mutation_rate = 0.10;
    int epochs = 20;
    std::int64_t min_flops = 0;
    std::int64_t max_flops = 0;
    int patience = 5;
    std::uint64_t seed = 0;
    int k_elite = 2;
    int mutants = 24;
    int crossovers = 14;
    int retry_budget = 100;
    IndexRange index_range{};
    int workers = 1;

    /// Throws ConfigError listing every violated constraint.
    void validate() const;
    bool in_window(std::int64_t flops) const { return flops >= min_flops && flops <= max_flops; }
};

/// Accuracy of the model a NEV defines; may throw, which discards the gene.
using Fitness = std::function<double(const Nev&)>;

struct EpochRecord {
    int epoch = 0;
    double best_reward = 0.0;   // best in this generation
    double mean_reward = 0.0;   // mean over this generation's ranked genes
    double best_accuracy = 0.0;
    std::int64_t best_flops = 0;
    std::int64_t unique_genes_evaluated = 0;  // cumulative distinct NEVs scored
    double archive_best_reward = 0.0;
};

struct SearchState {
    int epoch = 0;                  // next epoch to run
    std::vector<Gene> candidates;   // population awaiting ranking
    std::vector<Gene> elites;       // archive, best first
    std::vector<EpochRecord> history;
    std::set<Nev> evaluated;        // distinct NEVs scored so far
    int stagnant_epochs = 0;
    bool finished = false;
    std::uint64_t seed = 0;
};

/// Deterministic gene order: higher reward, then lower FLOPs, then lexicographic NEV.
bool ranks_before(const Gene& a, const Gene& b);

/// Per-gene random stream, independent of evaluation order.
Rng gene_rng(std::uint64_t seed, int epoch, int index, std::string_view role);

std::vector<Gene> seed_population(const ArchTemplate& t, const SearchConfig& config, Rng& rng);

/// Random gene inside the window (bounded retry).
Gene random_gene(const ArchTemplate& t, const SearchConfig& config, Rng& rng);

struct RankResult {
    std::vector<Gene> ranked;
    std::vector<Nev> discarded;
    std::int64_t fitness_calls = 0;
};

/// Scores every distinct NEV exactly once (up to `config.workers` concurrently)
/// and returns the genes sorted best first. Genes whose fitness or reward
/// throws are dropped with a warning.
RankResult rank(const std::vector<Gene>& candidates, const Fitness& fitness, const reward::RewardModel& model,
                int workers = 1);
RankResult rank(const std::vector<Gene>& candidates, const Fitness& fitness, const reward::RewardParams& params,
                int workers = 1);

Gene mutate(const Gene& gene, const SearchConfig& config, Rng& rng, const ArchTemplate& t);
Gene crossover(const Gene& a, const Gene& b, const SearchConfig& config, Rng& rng, const ArchTemplate& t);

/// Raw operators without the window recheck (used by the operators above and by statistics tests).
Nev mutate_nev(const Nev& nev, double rate, IndexRange range, Rng& rng);
Nev crossover_nev(const Nev& a, const Nev& b, Rng& rng);

struct GenerationMix {
    int carried = 0;
    int mutated = 0;
    int crossed = 0;
    int random = 0;
};

std::vector<Gene> next_generation(const SearchState& state, const SearchConfig& config, const ArchTemplate& t,
                                  GenerationMix* mix = nullptr);

/// Ranks the current candidates, updates archive/history, and prepares the next population.
void step(SearchState& state, const ArchTemplate& t, const SearchConfig& config, const Fitness& fitness,
          const reward::RewardModel& model);

SearchState initial_state(const ArchTemplate& t, const SearchConfig& config);

struct SearchResult {
    Gene best;
    std::vector<EpochRecord> history;
    SearchState state;
};

/// Called after each completed epoch; return false to stop (state is left resumable).
using EpochCallback = std::function<bool(const SearchState&)>;

SearchResult run_search(const ArchTemplate& t, const SearchConfig& config, const Fitness& fitness,
                        const reward::RewardModel& model, std::optional<SearchState> resume = std::nullopt,
                        const EpochCallback& on_epoch = {});
SearchResult run_search(const ArchTemplate& t, const SearchConfig& config, const Fitness& fitness,
                        const reward::RewardParams& params);

struct Histogram {
    std::vector<double> bin_low;
    std::vector<double> bin_high;
    std::vector<std::int64_t> counts;
    std::vector<std::int64_t> samples;
    double mean = 0.0;
};

/// FLOPs of `n` random NEVs drawn from `range`, bucketed into `bins` equal-width bins.
Histogram flops_distribution(const ArchTemplate& t, std::uint64_t seed, int n, IndexRange range, int bins = 20);

/// True when the (3-bin smoothed) histogram rises to a single peak and then falls,
/// tolerating dips within `noise_sigmas` Poisson standard deviations.
bool is_unimodal(const std::vector<std::int64_t>& counts, double noise_sigmas = 2.0);

// CSV/JSON persistence.
std::string history_csv(const std::vector<EpochRecord>& history);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
std::string histogram_csv(const Histogram& h);
void save_state(const SearchState& state, const std::filesystem::path& path);
SearchState load_state(const std::filesystem::path& path);

}  // namespace metaprune::evosearch
