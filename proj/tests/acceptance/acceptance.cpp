// One pass/fail line per acceptance criterion:
//   acceptance --criterion N     (N in 1..9)
//   acceptance --all
// Exit status is nonzero when any selected criterion fails.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>

#include "gradcheck.hpp"
#include "metaprune/cli/config.hpp"
#include "metaprune/evosearch.hpp"
#include "metaprune/hypernet/hypernet.hpp"
#include "metaprune/pipeline/pipeline.hpp"
#include "metaprune/reward.hpp"
#include "metaprune/tensorcore/ops.hpp"
#include "paths.hpp"

using namespace metaprune;
namespace fs = std::filesystem;
namespace tc = metaprune::tensorcore;
namespace es = metaprune::evosearch;
namespace hn = metaprune::hypernet;
namespace pl = metaprune::pipeline;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Timer {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

arch::ArchTemplate load(const std::string& name) {
    return arch::ArchTemplate::load(testutil::template_path(name));
}

// scratch space next to the build tree, wiped before use
fs::path scratch(const std::string& name) {
    const auto p = fs::current_path() / "acceptance_out" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// ---------------------------------------------------------------- 1

Outcome static_flops() {
    const std::vector<std::pair<std::string, double>> published{
        {"resnet50", 4110e6}, {"mobilenet_v2", 314e6}, {"mobilenet_v1", 569e6}};
    std::vector<arch::ArchTemplate> templates;
    for (const auto& [name, _] : published) templates.push_back(load(name));
    Timer timer;
    std::vector<std::int64_t> flops;
    for (const auto& t : templates) flops.push_back(arch::flops_of(t, t.full_width()));
    const double elapsed = timer.seconds();

    bool ok = elapsed < 1.0;
    std::string detail;
    for (std::size_t i = 0; i < published.size(); ++i) {
        const double dev = (static_cast<double>(flops[i]) - published[i].second) / published[i].second;
        ok = ok && std::abs(dev) <= 0.03;
        detail += fmt::format("{} {:.1f}M vs {:.0f}M ({:+.2f}%); ", published[i].first, flops[i] / 1e6,
                              published[i].second / 1e6, 100 * dev);
    }
    detail += fmt::format("{:.3f} ms", elapsed * 1e3);
    return {ok, detail};
}

// ---------------------------------------------------------------- 2

Outcome reward_identities() {
    using namespace reward;
    const RewardParams p{0.766, 4110e6};
    auto near = [](double v, double want) { return std::abs(v - want) <= 1e-3 * std::abs(want); };
    bool ok = true;
    std::string detail;
    const double a0 = alpha(0.0, p);
    const double ah = alpha(p.baseline_accuracy / 2, p);
    const double pe = psi(p.baseline_flops / std::numbers::e, p);
    bool boundary = false;
    try {
        psi(p.baseline_flops, p);
    } catch (const DomainError&) {
        boundary = true;
    }
    const auto w = reward::reward(0.7576, 1950e6, p);
    ok = near(a0, 1.0) && near(ah, 4.0) && near(pe, 1.0) && boundary && near(w.alpha, 8316) && near(w.psi, 0.7457) &&
         near(w.reward, 6202);
    detail = fmt::format("alpha(0)={:.6f} alpha(b_a/2)={:.6f} psi(b_f/e)={:.6f} psi(b_f) {}; worked point alpha={:.1f} "
                         "psi={:.5f} R={:.1f}",
                         a0, ah, pe, boundary ? "rejected" : "ACCEPTED", w.alpha, w.psi, w.reward);
    return {ok, detail};
}

// ---------------------------------------------------------------- 3

Outcome monotonicity() {
    using namespace reward;
    Rng rng(derive_seed(3, "monotonicity"));
    const RewardParams p{0.766, 4110e6};
    const AccuracyFlopsReward natural(p), base2(p, 2.0), base10(p, 10.0);
    int violations = 0, rank_flips = 0, pairs = 0;
    for (int i = 0; i < 10000; ++i) {
        const double a1 = rng.uniform(0.0, p.baseline_accuracy), a2 = rng.uniform(0.0, p.baseline_accuracy);
        const double f1 = rng.uniform(1e6, p.baseline_flops), f2 = rng.uniform(1e6, p.baseline_flops);
        if (a1 == a2 || f1 == f2) continue;
        ++pairs;
        const double lo_a = std::min(a1, a2), hi_a = std::max(a1, a2);
        const double lo_f = std::min(f1, f2), hi_f = std::max(f1, f2);
        if (!(natural.evaluate(hi_a, f1).reward > natural.evaluate(lo_a, f1).reward)) ++violations;
        if (!(natural.evaluate(a1, lo_f).reward > natural.evaluate(a1, hi_f).reward)) ++violations;
        const bool e = natural.evaluate(a1, f1).reward > natural.evaluate(a2, f2).reward;
        if (e != (base2.evaluate(a1, f1).reward > base2.evaluate(a2, f2).reward)) ++rank_flips;
        if (e != (base10.evaluate(a1, f1).reward > base10.evaluate(a2, f2).reward)) ++rank_flips;
    }
    return {pairs == 10000 && violations == 0 && rank_flips == 0,
            fmt::format("{} pairs, {} monotonicity violations, {} ranking changes under base 2/10", pairs, violations,
                        rank_flips)};
}

// ---------------------------------------------------------------- 4

// smooth trend plus a fixed hash-based perturbation per gene
double oracle_fitness(const arch::Nev& nev) {
    double s = 0.0;
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::size_t i = 0; i < nev.size(); ++i) {
        s += arch::ScaleGrid::level(nev[i]) * (1.0 + 0.5 * static_cast<double>(i));
        h = splitmix64(h ^ static_cast<std::uint64_t>(nev[i] + 31 * static_cast<int>(i)));
    }
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    return 0.55 + 0.08 * s / 7.0 + 0.05 * u;
}

Outcome search_oracle() {
    const auto t = load("mininet");
    const arch::IndexRange range{27, 30};
    std::vector<es::Gene> all;
    for (int a = range.lo; a <= range.hi; ++a)
        for (int b = range.lo; b <= range.hi; ++b)
            for (int c = range.lo; c <= range.hi; ++c)
                for (int d = range.lo; d <= range.hi; ++d) all.push_back(es::Gene::make(t, arch::Nev{{a, b, c, d}}));
    std::int64_t lo = all.front().flops, hi = all.front().flops;
    for (const auto& g : all) {
        lo = std::min(lo, g.flops);
        hi = std::max(hi, g.flops);
    }
    const reward::RewardParams params{0.999, 1.05 * static_cast<double>(hi)};

    // exhaustive ranking with the same reward and tie-break
    const auto exhaustive = es::rank(all, oracle_fitness, params);
    std::map<arch::Nev, std::size_t> position;
    for (std::size_t i = 0; i < exhaustive.ranked.size(); ++i) position[exhaustive.ranked[i].nev] = i + 1;
    const std::size_t top = static_cast<std::size_t>(std::floor(0.01 * static_cast<double>(all.size())));

    Timer timer;
    int hits = 0;
    std::vector<std::size_t> ranks;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        es::SearchConfig c;
        c.index_range = range;
        c.min_flops = lo;
        c.max_flops = hi;
        c.seed = seed;
        const auto r = es::run_search(t, c, oracle_fitness, params);
        const auto pos = position.at(r.best.nev);
        ranks.push_back(pos);
        hits += pos <= top;
    }
    const double elapsed = timer.seconds();
    std::string rs;
    for (auto r : ranks) rs += fmt::format("{} ", r);
    return {hits >= 19 && elapsed < 60.0 && exhaustive.ranked.size() == 256,
            fmt::format("{} genes, top 1% = rank <= {}; {}/20 seeds hit (ranks: {}); {:.2f} s", all.size(), top, hits,
                        rs, elapsed)};
}

// ---------------------------------------------------------------- 5

Outcome operator_statistics() {
    const auto t = load("mininet");
    Rng rng(derive_seed(5, "operators"));
    const int trials = 10000;
    const arch::IndexRange range{};
    const double p = 0.10 * 30.0 / 31.0;

    // per slot: each of the 4 slots over 10^4 trials, and pooled
    std::vector<std::int64_t> changed(t.nev_length(), 0);
    for (int i = 0; i < trials; ++i) {
        const auto base = arch::random_nev(t, rng);
        const auto m = es::mutate_nev(base, 0.10, range, rng);
        for (std::size_t s = 0; s < m.size(); ++s) changed[s] += m[s] != base[s];
    }
    bool rate_ok = true;
    const double sigma = std::sqrt(trials * p * (1 - p));
    std::string rates;
    std::int64_t pooled = 0;
    for (auto c : changed) {
        rate_ok = rate_ok && std::abs(static_cast<double>(c) - trials * p) <= 3 * sigma;
        rates += fmt::format("{:.4f} ", static_cast<double>(c) / trials);
        pooled += c;
    }
    const double n_pooled = static_cast<double>(trials) * static_cast<double>(changed.size());
    rate_ok = rate_ok && std::abs(static_cast<double>(pooled) - n_pooled * p) <= 3 * std::sqrt(n_pooled * p * (1 - p));

    // crossover: every slot of every child from one of its parents
    std::int64_t checked = 0, foreign = 0;
    for (int i = 0; i < trials; ++i) {
        const auto a = arch::random_nev(t, rng);
        const auto b = arch::random_nev(t, rng);
        const auto c = es::crossover_nev(a, b, rng);
        for (std::size_t s = 0; s < c.size(); ++s, ++checked) foreign += !(c[s] == a[s] || c[s] == b[s]);
    }

    // elitism: generation best and archive best never drop
    int drops = 0, runs = 0;
    const auto full = arch::flops_of(t, t.full_width());
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        es::SearchConfig c;
        c.seed = seed;
        c.patience = 1000;
        c.min_flops = static_cast<std::int64_t>(0.3 * full);
        c.max_flops = static_cast<std::int64_t>(0.7 * full);
        const auto r = es::run_search(t, c, oracle_fitness, reward::RewardParams{0.999, static_cast<double>(full)});
        for (std::size_t i = 1; i < r.history.size(); ++i) {
            drops += r.history[i].best_reward < r.history[i - 1].best_reward;
            drops += r.history[i].archive_best_reward < r.history[i - 1].archive_best_reward;
        }
        ++runs;
    }
    return {rate_ok && foreign == 0 && drops == 0,
            fmt::format("mutation rate per slot {}(expected {:.4f} +- {:.4f}); crossover {} slots, {} foreign; "
                        "{} searches, {} best-reward drops",
                        rates, p, 3 * sigma / trials, checked, foreign, runs, drops)};
}

// ---------------------------------------------------------------- 6

using GradCase = std::function<std::pair<std::function<tc::Var()>, std::vector<tc::Var>>(Rng&)>;

tc::Var param(const tc::Shape& s, Rng& rng) { return tc::Var::parameter(testutil::random_tensor(s, rng)); }

tc::Var probe(const tc::Var& y, std::uint64_t seed) {
    Rng rng(seed);
    return tc::weighted_sum(y, testutil::random_tensor(y.shape(), rng));
}

Outcome gradients() {
    const auto tiny = arch::ArchTemplate::from_json_text(R"({
      "name": "gradcheck", "input_shape": [2, 8, 8],
      "layers": [
        {"name": "c1", "kind": "conv", "kernel": 3, "padding": 1, "out_channels": 6, "norm": true, "relu": true, "prunable": true},
        {"name": "c2", "kind": "conv", "kernel": 3, "padding": 1, "out_channels": 6, "norm": true, "prunable": true, "residual": "c1"},
        {"name": "dw", "kind": "depthwise", "kernel": 3, "stride": 2, "padding": 1, "norm": true, "relu": true},
        {"name": "pw", "kind": "pointwise", "out_channels": 8, "norm": true, "relu": true, "prunable": true},
        {"name": "gap", "kind": "global_avg_pool"},
        {"name": "fc", "kind": "dense", "out_channels": 5}
      ],
      "slots": [{"name": "a", "layers": ["c1", "c2"]}, {"name": "b", "layers": ["pw"]}],
      "shortcut_groups": [["c1", "c2"]]
    })");
    std::vector<std::pair<std::string, GradCase>> cases;
    auto add = [&](std::string name, GradCase c) { cases.emplace_back(std::move(name), std::move(c)); };
    using F = std::function<tc::Var()>;
    add("dense", [](Rng& r) {
        auto x = param({3, 5}, r), w = param({4, 5}, r), b = param({4}, r);
        return std::pair{F([=] { return probe(tc::dense(x, w, b), 1); }), std::vector{x, w, b}};
    });
    add("conv2d", [](Rng& r) {
        auto x = param({2, 3, 6, 6}, r), w = param({4, 3, 3, 3}, r);
        return std::pair{F([=] { return probe(tc::conv2d(x, w, 2, 1), 2); }), std::vector{x, w}};
    });
    add("depthwise_conv2d", [](Rng& r) {
        auto x = param({2, 3, 5, 5}, r), w = param({3, 1, 3, 3}, r);
        return std::pair{F([=] { return probe(tc::depthwise_conv2d(x, w, 1, 1), 3); }), std::vector{x, w}};
    });
    add("channel_norm_affine", [](Rng& r) {
        auto x = param({4, 3, 2, 2}, r), g = param({3}, r), b = param({3}, r);
        return std::pair{F([=] { return probe(tc::channel_norm_affine(x, g, b, 1e-5), 4); }), std::vector{x, g, b}};
    });
    add("channel_norm_fixed", [](Rng& r) {
        auto x = param({3, 2, 2, 2}, r), g = param({2}, r), b = param({2}, r);
        const tc::NormStats s{{0.1, -0.4}, {0.8, 2.0}};
        return std::pair{F([=] { return probe(tc::channel_norm_fixed(x, g, b, s), 5); }), std::vector{x, g, b}};
    });
    add("relu", [](Rng& r) {
        auto x = param({4, 6}, r);
        return std::pair{F([=] { return probe(tc::relu(x), 6); }), std::vector{x}};
    });
    add("add", [](Rng& r) {
        auto a = param({2, 3, 2}, r), b = param({2, 3, 2}, r);
        return std::pair{F([=] { return probe(tc::add(a, b), 7); }), std::vector{a, b}};
    });
    add("add_scalar", [](Rng& r) {
        auto x = param({5}, r);
        return std::pair{F([=] { return probe(tc::add_scalar(x, -1.5), 8); }), std::vector{x}};
    });
    add("global_avg_pool", [](Rng& r) {
        auto x = param({2, 3, 3, 3}, r);
        return std::pair{F([=] { return probe(tc::global_avg_pool(x), 9); }), std::vector{x}};
    });
    add("max_pool2d", [](Rng& r) {
        auto x = param({2, 2, 5, 5}, r);
        return std::pair{F([=] { return probe(tc::max_pool2d(x, 3, 2, 1), 10); }), std::vector{x}};
    });
    add("flatten", [](Rng& r) {
        auto x = param({2, 2, 2, 2}, r);
        return std::pair{F([=] { return probe(tc::flatten(x), 11); }), std::vector{x}};
    });
    add("softmax_cross_entropy", [](Rng& r) {
        auto z = param({4, 6}, r);
        const std::vector<int> labels{5, 0, 3, 3};
        return std::pair{F([=] { return tc::softmax_cross_entropy(z, labels); }), std::vector{z}};
    });
    add("weighted_sum", [](Rng& r) {
        auto x = param({7}, r);
        return std::pair{F([=] { return probe(x, 12); }), std::vector{x}};
    });
    add("crop", [](Rng& r) {
        auto s = param({60}, r);
        return std::pair{F([=] { return probe(tc::crop(s, 5, {3, 2, 3, 3}, {2, 1, 3, 2}), 13); }), std::vector{s}};
    });
    add("hypernet -> slice -> loss", [&tiny](Rng& r) {
        auto h = std::make_shared<hn::HyperNet>(tiny, r.next(), 6);
        auto x = tc::Var::constant(testutil::random_tensor({4, 2, 8, 8}, r));
        const arch::Nev nev{{static_cast<int>(r.uniform_int(0, 30)), static_cast<int>(r.uniform_int(0, 30))}};
        const std::vector<int> labels{0, 1, 4, 2};
        return std::pair{F([=] {
                             const auto m = hn::generate_weights(*h, nev);
                             return tc::softmax_cross_entropy(hn::forward(tiny, m.plan, m.weights, x), labels);
                         }),
                         h->parameters()};
    });

    Timer timer;
    double worst = 0.0;
    std::string worst_case;
    std::size_t coords = 0;
    const int seeds = 10;
    for (const auto& [name, build] : cases) {
        for (int seed = 0; seed < seeds; ++seed) {
            Rng rng(derive_seed(6, name, static_cast<std::uint64_t>(seed)));
            auto [loss, inputs] = build(rng);
            const auto g = testutil::grad_check(loss, inputs, 1e-5, 64, &rng);
            coords += g.checked;
            if (g.max_rel_error > worst) {
                worst = g.max_rel_error;
                worst_case = fmt::format("{} seed {}", name, seed);
            }
        }
    }
    const double elapsed = timer.seconds();
    return {worst < 1e-4 && elapsed < 300.0 && sizeof(tc::real) == 8,
            fmt::format("{} cases x {} seeds, {} coordinates; worst relative error {:.2e} ({}); {:.1f} s", cases.size(),
                        seeds, coords, worst, worst_case, elapsed)};
}

// ---------------------------------------------------------------- 7

Outcome flops_histogram() {
    const auto t = load("resnet50");
    const auto all = es::flops_distribution(t, 7, 1000, {}, 20);
    const bool unimodal = es::is_unimodal(all.counts);
    std::vector<double> means;
    for (const auto& r : {arch::IndexRange{0, 10}, arch::IndexRange{10, 20}, arch::IndexRange{20, 30}}) {
        means.push_back(es::flops_distribution(t, 7, 1000, r, 20).mean);
    }
    const bool shifts = means[0] < means[1] && means[1] < means[2];
    std::string counts;
    for (auto c : all.counts) counts += fmt::format("{} ", c);
    return {unimodal && shifts,
            fmt::format("histogram [{}] {}; means {:.0f}M < {:.0f}M < {:.0f}M {}", counts,
                        unimodal ? "unimodal" : "NOT unimodal", means[0] / 1e6, means[1] / 1e6, means[2] / 1e6,
                        shifts ? "holds" : "FAILS")};
}

// ---------------------------------------------------------------- 8

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
}

Outcome desk_run() {
    auto cfg = cli::load_config(testutil::source_dir() / "configs" / "desk.json");
    cfg.template_path = (testutil::source_dir() / cfg.template_path).string();
    cfg.out = scratch("desk").string();
    cfg.workers = 1;
    cfg.validate();
    const auto t = arch::ArchTemplate::load(cfg.template_path);
    const auto data = cli::load_dataset(cfg);
    const auto options = pl::resolve(t, cli::run_options(cfg));

    Timer timer;
    const auto report = pl::run_all(t, data, options);
    const double pipeline_s = timer.seconds();
    const auto history = es::load_state(options.out_dir / "search_state.json").history;

    // paired retrains: best gene and full width with the same seeds
    std::vector<double> best_err, full_err, gaps;
    for (std::uint64_t k = 0; k < 3; ++k) {
        auto ro = options.retrain;
        ro.checkpoint.clear();
        ro.seed = k == 0 ? options.retrain.seed : derive_seed(options.retrain.seed, "paired", k);
        const auto b = pl::metrics(t, pl::retrain(t, report.best, data.train, ro), data.validation);
        const auto f = pl::metrics(t, pl::retrain(t, t.full_width(), data.train, ro), data.validation);
        best_err.push_back(b.top1_error);
        full_err.push_back(f.top1_error);
        gaps.push_back(b.top1_error - f.top1_error);
    }
    const double total_s = timer.seconds();
    const double gap = median3(gaps);
    const double ratio = static_cast<double>(report.flops) / static_cast<double>(report.full_flops);
    const bool budget = static_cast<int>(history.size()) <= 20 && report.unique_genes <= 1000;
    const bool ok = gap <= 0.03 && ratio <= 0.7 && budget && total_s < 3600.0 && data.train.size() + data.validation.size() == 10000 &&
                    best_err[0] == report.top1_error;
    return {ok, fmt::format("best [{}] at {:.1f}% FLOPs; top-1 error best {:.2f}/{:.2f}/{:.2f}%, full {:.2f}/{:.2f}/{:.2f}%; "
                            "median gap {:+.2f} points; {} search epochs, {} unique genes; pipeline {:.0f} s, total {:.0f} s",
                            arch::to_string(report.best), 100 * ratio, 100 * best_err[0], 100 * best_err[1],
                            100 * best_err[2], 100 * full_err[0], 100 * full_err[1], 100 * full_err[2], 100 * gap,
                            history.size(), report.unique_genes, pipeline_s, total_s)};
}

// ---------------------------------------------------------------- 9

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

Outcome determinism() {
    auto cfg = cli::load_config(testutil::source_dir() / "configs" / "smoke.json");
    cfg.template_path = (testutil::source_dir() / cfg.template_path).string();
    cfg.workers = 1;
    const auto t = arch::ArchTemplate::load(cfg.template_path);
    const auto data = cli::load_dataset(cfg);
    auto options_for = [&](const std::string& name) {
        auto c = cfg;
        c.out = scratch(name).string();
        return cli::run_options(c);
    };

    const auto a_opts = options_for("replay_a");
    const auto b_opts = options_for("replay_b");
    const auto a = pl::run_all(t, data, a_opts);
    const auto b = pl::run_all(t, data, b_opts);
    std::vector<std::string> differ;
    for (const char* f : {"hypernet.ckpt", "meta_train_log.csv", "baseline.ckpt", "baseline.json", "search_state.json",
                          "search_history.csv", "best_gene.json", "retrain.ckpt"}) {
        if (slurp(a_opts.out_dir / f) != slurp(b_opts.out_dir / f) || slurp(a_opts.out_dir / f).empty()) differ.push_back(f);
    }
    if (pl::report_to_json(a, false) != pl::report_to_json(b, false)) differ.push_back("report");

    // interrupt once in every phase, then resume
    const auto r_opts = options_for("resume");
    int interrupts = 0;
    const std::vector<std::string> phases{"meta-train", "baseline", "search", "retrain"};
    for (const auto& phase : phases) {
        try {
            pl::run_all(t, data, r_opts, [&](std::string_view p, int epoch) { return p == phase && epoch == 1; });
        } catch (const pl::Interrupted&) {
            ++interrupts;
        }
    }
    const auto resumed = pl::run_all(t, data, r_opts);
    const bool same_best = resumed.best == a.best;
    const bool same_report = pl::report_to_json(resumed, false) == pl::report_to_json(a, false);
    std::string diff_list;
    for (const auto& d : differ) diff_list += d + " ";
    return {differ.empty() && interrupts == static_cast<int>(phases.size()) && same_best && same_report,
            fmt::format("replay: {}; {} interrupts, resumed best [{}] vs [{}], report {}",
                        differ.empty() ? "all artifacts bit-identical" : "differs in " + diff_list, interrupts,
                        arch::to_string(resumed.best), arch::to_string(a.best),
                        same_report ? "identical" : "DIFFERS")};
}

const std::map<int, std::function<Outcome()>>& criteria() {
    static const std::map<int, std::function<Outcome()>> table{
        {1, static_flops},        {2, reward_identities}, {3, monotonicity},
        {4, search_oracle},       {5, operator_statistics}, {6, gradients},
        {7, flops_histogram},     {8, desk_run},          {9, determinism},
    };
    return table;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks", "acceptance"};
    int only = 0;
    bool all = false;
    app.add_option("--criterion", only, "Criterion number")->check(CLI::Range(1, 9));
    app.add_flag("--all", all, "Run every criterion");
    CLI11_PARSE(app, argc, argv);
    if (!all && only == 0) {
        fmt::print(stderr, "pass --criterion N or --all\n");
        return 2;
    }
    int failures = 0;
    for (const auto& [n, check] : criteria()) {
        if (!all && n != only) continue;
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        fmt::print("criterion {}: {}: {}\n", n, o.pass ? "PASS" : "FAIL", o.detail);
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures == 0 ? 0 : 1;
}
