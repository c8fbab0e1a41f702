#include "metaprune/evosearch.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

namespace metaprune::evosearch {

Gene Gene::make(const ArchTemplate& t, Nev nev) {
    Gene g;
    g.flops = arch::flops_of(t, nev);
    g.nev = std::move(nev);
    return g;
}

void SearchConfig::validate() const {
    std::vector<std::string> errors;
    if (population < 1) errors.push_back("population must be >= 1");
    if (elite_archive < 1) errors.push_back("elite_archive must be >= 1");
    if (breeders < 0 || breeders > elite_archive) errors.push_back("breeders must lie in [0, elite_archive]");
    if (!(mutation_rate >= 0.0 && mutation_rate < 1.0)) errors.push_back("mutation_rate must lie in [0, 1)");
    if (epochs < 0) errors.push_back("epochs must be >= 0");
    if (min_flops <= 0) errors.push_back("min_flops must be positive");
    if (max_flops < min_flops) errors.push_back("max_flops must be >= min_flops");
    if (patience < 1) errors.push_back("patience must be >= 1");
    if (k_elite < 0 || mutants < 0 || crossovers < 0) errors.push_back("generation mix counts must be >= 0");
    if (k_elite + mutants + crossovers > population) {
        errors.push_back("k_elite + mutants + crossovers must not exceed population");
    }
    if (retry_budget < 1) errors.push_back("retry_budget must be >= 1");
    if (index_range.lo > index_range.hi || index_range.lo < 0 || index_range.hi > arch::ScaleGrid::kMaxIndex) {
        errors.push_back("index_range must be a non-empty subrange of [0, 30]");
    }
    if (workers < 1) errors.push_back("workers must be >= 1");
    if (!errors.empty()) {
        std::string msg = "invalid search config:";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ConfigError(msg);
    }
}

bool ranks_before(const Gene& a, const Gene& b) {
    const double ra = a.reward.value_or(-INFINITY);
    const double rb = b.reward.value_or(-INFINITY);
    if (ra != rb) return ra > rb;
    if (a.flops != b.flops) return a.flops < b.flops;
    return a.nev < b.nev;
}

Rng gene_rng(std::uint64_t seed, int epoch, int index, std::string_view role) {
    return Rng(derive_seed(derive_seed(seed, role), "gene", static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(index)));
}

namespace {

std::string window_text(const SearchConfig& c) {
    return fmt::format("[{}, {}] MACs", c.min_flops, c.max_flops);
}

void warn(const std::string& msg) {
    fmt::print(stderr, "warning: {}\n", msg);
}

}  // namespace

Gene random_gene(const ArchTemplate& t, const SearchConfig& config, Rng& rng) {
    for (int attempt = 0; attempt < config.retry_budget; ++attempt) {
        auto nev = arch::random_nev(t, rng, config.index_range);
        const auto flops = arch::flops_of(t, nev);
        if (config.in_window(flops)) {
            Gene g;
            g.nev = std::move(nev);
            g.flops = flops;
            return g;
        }
    }
    throw WindowInfeasible(fmt::format("no random gene found inside FLOPs window {} after {} attempts",
                                       window_text(config), config.retry_budget));
}

std::vector<Gene> seed_population(const ArchTemplate& t, const SearchConfig& config, Rng& rng) {
    std::vector<Gene> pop;
    pop.reserve(static_cast<std::size_t>(config.population));
    const std::int64_t budget = static_cast<std::int64_t>(config.population) * config.retry_budget;
    for (std::int64_t attempt = 0; attempt < budget && static_cast<int>(pop.size()) < config.population; ++attempt) {
        auto nev = arch::random_nev(t, rng, config.index_range);
        const auto flops = arch::flops_of(t, nev);
        if (config.in_window(flops)) {
            Gene g;
            g.nev = std::move(nev);
            g.flops = flops;
            pop.push_back(std::move(g));
        }
    }
    if (static_cast<int>(pop.size()) < config.population) {
        throw WindowInfeasible(fmt::format("FLOPs window {} admitted only {} of {} genes within {} attempts",
                                           window_text(config), pop.size(), config.population, budget));
    }
    return pop;
}

RankResult rank(const std::vector<Gene>& candidates, const Fitness& fitness, const reward::RewardModel& model,
                int workers) {
    // Distinct NEVs in first-seen order; each is scored once.
    std::vector<const Gene*> distinct;
    std::map<Nev, std::size_t> slot_of;
    for (const auto& g : candidates) {
        if (slot_of.emplace(g.nev, distinct.size()).second) distinct.push_back(&g);
    }

    std::vector<std::optional<double>> accuracy(distinct.size());
    std::vector<std::string> failure(distinct.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < distinct.size(); i = next++) {
            try {
                accuracy[i] = fitness(distinct[i]->nev);
            } catch (const std::exception& e) {
                failure[i] = e.what();
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(distinct.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker);
    }

    RankResult out;
    out.fitness_calls = static_cast<std::int64_t>(distinct.size());
    std::vector<std::optional<reward::RewardValue>> value(distinct.size());
    for (std::size_t i = 0; i < distinct.size(); ++i) {
        if (accuracy[i]) {
            try {
                value[i] = model.evaluate(*accuracy[i], static_cast<double>(distinct[i]->flops));
            } catch (const std::exception& e) {
                failure[i] = e.what();
            }
        }
        if (!value[i]) {
            warn(fmt::format("discarding gene [{}]: {}", arch::to_string(distinct[i]->nev), failure[i]));
            out.discarded.push_back(distinct[i]->nev);
        }
    }
    for (const auto& g : candidates) {
        const std::size_t i = slot_of.at(g.nev);
        if (!value[i]) continue;
        Gene r = g;
        r.accuracy = accuracy[i];
        r.reward = value[i]->reward;
        out.ranked.push_back(std::move(r));
    }
    std::stable_sort(out.ranked.begin(), out.ranked.end(), ranks_before);
    return out;
}

RankResult rank(const std::vector<Gene>& candidates, const Fitness& fitness, const reward::RewardParams& params,
                int workers) {
    return rank(candidates, fitness, reward::AccuracyFlopsReward(params), workers);
}

Nev mutate_nev(const Nev& nev, double rate, IndexRange range, Rng& rng) {
    Nev out = nev;
    for (auto& s : out.slots) {
        // Resample over the whole allowed range; may redraw the same value.
        if (rng.bernoulli(rate)) s = static_cast<int>(rng.uniform_int(range.lo, range.hi));
    }
    return out;
}

Nev crossover_nev(const Nev& a, const Nev& b, Rng& rng) {
    if (a.size() != b.size()) throw std::invalid_argument("crossover parents differ in length");
    Nev out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.bernoulli(0.5) ? a[i] : b[i];
    return out;
}

Gene mutate(const Gene& gene, const SearchConfig& config, Rng& rng, const ArchTemplate& t) {
    t.check(gene.nev);
    for (int attempt = 0; attempt < config.retry_budget; ++attempt) {
        auto nev = mutate_nev(gene.nev, config.mutation_rate, config.index_range, rng);
        const auto flops = arch::flops_of(t, nev);
        if (config.in_window(flops)) {
            Gene g;
            g.nev = std::move(nev);
            g.flops = flops;
            return g;
        }
    }
    return random_gene(t, config, rng);
}

Gene crossover(const Gene& a, const Gene& b, const SearchConfig& config, Rng& rng, const ArchTemplate& t) {
    t.check(a.nev);
    t.check(b.nev);
    for (int attempt = 0; attempt < config.retry_budget; ++attempt) {
        auto nev = crossover_nev(a.nev, b.nev, rng);
        const auto flops = arch::flops_of(t, nev);
        if (config.in_window(flops)) {
            Gene g;
            g.nev = std::move(nev);
            g.flops = flops;
            return g;
        }
    }
    return random_gene(t, config, rng);
}

std::vector<Gene> next_generation(const SearchState& state, const SearchConfig& config, const ArchTemplate& t,
                                  GenerationMix* mix) {
    const int pop = config.population;
    const int n_elites = static_cast<int>(state.elites.size());
    GenerationMix m;
    m.carried = std::min({config.k_elite, n_elites, pop});
    const int breeders = std::min(config.breeders, n_elites);
    m.mutated = breeders > 0 ? std::min(config.mutants, pop - m.carried) : 0;
    m.crossed = breeders > 0 ? std::min(config.crossovers, pop - m.carried - m.mutated) : 0;
    m.random = pop - m.carried - m.mutated - m.crossed;

    std::vector<Gene> next;
    next.reserve(static_cast<std::size_t>(pop));
    int index = 0;
    for (int i = 0; i < m.carried; ++i, ++index) {
        Gene g = state.elites[static_cast<std::size_t>(i)];
        g.accuracy.reset();
        g.reward.reset();
        next.push_back(std::move(g));
    }
    for (int i = 0; i < m.mutated; ++i, ++index) {
        auto rng = gene_rng(state.seed, state.epoch, index, "mutate");
        next.push_back(mutate(state.elites[static_cast<std::size_t>(i % breeders)], config, rng, t));
    }
    for (int i = 0; i < m.crossed; ++i, ++index) {
        auto rng = gene_rng(state.seed, state.epoch, index, "crossover");
        const auto a = static_cast<std::size_t>(rng.uniform_int(0, breeders - 1));
        auto b = a;
        if (breeders > 1) {
            b = static_cast<std::size_t>(rng.uniform_int(0, breeders - 2));
            if (b >= a) ++b;
        }
        next.push_back(crossover(state.elites[a], state.elites[b], config, rng, t));
    }
    for (int i = 0; i < m.random; ++i, ++index) {
        auto rng = gene_rng(state.seed, state.epoch, index, "random");
        next.push_back(random_gene(t, config, rng));
    }
    if (mix) *mix = m;
    return next;
}

SearchState initial_state(const ArchTemplate& t, const SearchConfig& config) {
    config.validate();
    SearchState s;
    s.seed = config.seed;
    Rng rng(derive_seed(config.seed, "seed-population"));
    s.candidates = seed_population(t, config, rng);
    s.finished = config.epochs == 0;
    return s;
}

void step(SearchState& state, const ArchTemplate& t, const SearchConfig& config, const Fitness& fitness,
          const reward::RewardModel& model) {
    const auto result = rank(state.candidates, fitness, model, config.workers);
    for (const auto& g : state.candidates) state.evaluated.insert(g.nev);

    const double previous_best = state.elites.empty() ? -INFINITY : *state.elites.front().reward;

    // Archive: best `elite_archive` distinct genes seen so far.
    std::vector<Gene> merged = state.elites;
    std::set<Nev> seen;
    for (const auto& g : merged) seen.insert(g.nev);
    for (const auto& g : result.ranked) {
        if (seen.insert(g.nev).second) merged.push_back(g);
    }
    std::stable_sort(merged.begin(), merged.end(), ranks_before);
    if (static_cast<int>(merged.size()) > config.elite_archive) {
        merged.resize(static_cast<std::size_t>(config.elite_archive));
    }
    state.elites = std::move(merged);

    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.unique_genes_evaluated = static_cast<std::int64_t>(state.evaluated.size());
    if (!result.ranked.empty()) {
        const auto& best = result.ranked.front();
        rec.best_reward = *best.reward;
        rec.best_accuracy = *best.accuracy;
        rec.best_flops = best.flops;
        double sum = 0.0;
        for (const auto& g : result.ranked) sum += *g.reward;
        rec.mean_reward = sum / static_cast<double>(result.ranked.size());
    } else {
        rec.best_reward = rec.mean_reward = rec.best_accuracy = std::nan("");
    }
    const double archive_best = state.elites.empty() ? -INFINITY : *state.elites.front().reward;
    rec.archive_best_reward = state.elites.empty() ? std::nan("") : archive_best;
    state.history.push_back(rec);

    state.stagnant_epochs = archive_best > previous_best ? 0 : state.stagnant_epochs + 1;
    ++state.epoch;
    state.finished = state.epoch >= config.epochs || state.stagnant_epochs >= config.patience;
    state.candidates.clear();
    if (!state.finished) state.candidates = next_generation(state, config, t);
}

SearchResult run_search(const ArchTemplate& t, const SearchConfig& config, const Fitness& fitness,
                        const reward::RewardModel& model, std::optional<SearchState> resume,
                        const EpochCallback& on_epoch) {
    config.validate();
    SearchState state = resume ? std::move(*resume) : initial_state(t, config);
    // A larger epoch budget on resume reopens a search that only ran out of epochs.
    if (state.finished && state.epoch < config.epochs && state.stagnant_epochs < config.patience) {
        state.finished = false;
        if (state.candidates.empty()) state.candidates = next_generation(state, config, t);
    }
    while (!state.finished) {
        step(state, t, config, fitness, model);
        if (on_epoch && !on_epoch(state)) break;
    }
    if (state.elites.empty()) throw std::runtime_error("search finished without any successfully scored gene");
    return SearchResult{state.elites.front(), state.history, state};
}

SearchResult run_search(const ArchTemplate& t, const SearchConfig& config, const Fitness& fitness,
                        const reward::RewardParams& params) {
    return run_search(t, config, fitness, reward::AccuracyFlopsReward(params));
}

Histogram flops_distribution(const ArchTemplate& t, std::uint64_t seed, int n, IndexRange range, int bins) {
    if (n < 1) throw std::invalid_argument("flops_distribution needs n >= 1");
    if (bins < 1) throw std::invalid_argument("flops_distribution needs bins >= 1");
    range.validate();
    Rng rng(derive_seed(seed, "flops-distribution"));
    Histogram h;
    h.samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) h.samples.push_back(arch::flops_of(t, arch::random_nev(t, rng, range)));
    const auto [lo_it, hi_it] = std::minmax_element(h.samples.begin(), h.samples.end());
    const double lo = static_cast<double>(*lo_it);
    const double hi = static_cast<double>(*hi_it);
    if (lo == hi) bins = 1;
    const double width = bins == 1 ? 0.0 : (hi - lo) / bins;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (int b = 0; b < bins; ++b) {
        h.bin_low.push_back(lo + width * b);
        h.bin_high.push_back(b == bins - 1 ? hi : lo + width * (b + 1));
    }
    double sum = 0.0;
    for (auto v : h.samples) {
        sum += static_cast<double>(v);
        int b = width == 0.0 ? 0 : static_cast<int>((static_cast<double>(v) - lo) / width);
        b = std::clamp(b, 0, bins - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    h.mean = sum / n;
    return h;
}

bool is_unimodal(const std::vector<std::int64_t>& counts, double noise_sigmas) {
    const std::size_t n = counts.size();
    if (n <= 2) return true;
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        int k = 0;
        for (std::size_t j = (i == 0 ? 0 : i - 1); j <= std::min(n - 1, i + 1); ++j, ++k) acc += counts[j];
        s[i] = acc / k;
    }
    const std::size_t peak = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    auto tol = [&](double v) { return noise_sigmas * std::sqrt(std::max(v, 1.0)); };
    // Rising side: no bin significantly above a later bin before the peak.
    double running_min = s[peak];
    for (std::size_t i = peak; i-- > 0;) {
        if (s[i] > running_min + tol(s[i])) return false;
        running_min = std::min(running_min, s[i]);
    }
    running_min = s[peak];
    for (std::size_t i = peak + 1; i < n; ++i) {
        if (s[i] > running_min + tol(s[i])) return false;
        running_min = std::min(running_min, s[i]);
    }
    return true;
}

}  // namespace metaprune::evosearch
