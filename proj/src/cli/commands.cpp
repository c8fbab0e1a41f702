#include "metaprune/cli/commands.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <optional>
#include <ostream>

#include "metaprune/cli/config.hpp"

namespace metaprune::cli {

namespace fs = std::filesystem;
namespace es = evosearch;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) {
    g_stop.store(true);
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
    std::string template_path;
    std::string dataset;
    std::string format;
};

struct Overrides {
    std::optional<int> epochs;
    std::optional<int> meta_epochs;
    std::optional<int> search_epochs;
    std::optional<int> retrain_epochs;
    std::string nev;
    double acc_min = 0.0, acc_max = 0.95;
    int acc_steps = 20;
    double flops_min = 0.0, flops_max = 0.0;
    int flops_steps = 20;
    int samples = 1000;
    int bins = 20;
    int lo = 0, hi = arch::ScaleGrid::kMaxIndex;
};

RunConfig build_config(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) cfg = load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.workers) cfg.workers = *c.workers;
    if (!c.out.empty()) cfg.out = c.out;
    if (!c.template_path.empty()) cfg.template_path = c.template_path;
    if (!c.dataset.empty()) cfg.dataset_path = c.dataset;
    if (!c.format.empty()) cfg.dataset_format = c.format;
    return cfg;
}

pipeline::StopRequest stop_request() {
    return [](std::string_view, int) { return g_stop.load(); };
}

std::string millions(double v) {
    return fmt::format("{:.1f}M", v / 1e6);
}

int cmd_flops(const RunConfig& cfg, const Overrides& ov, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto t = arch::ArchTemplate::load(cfg.template_path);
    const arch::Nev nev = ov.nev.empty() ? t.full_width() : arch::nev_from_string(ov.nev);
    t.check(nev);
    const auto flops = arch::flops_of(t, nev);
    const auto params = arch::params_of(t, nev);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    fmt::print(out, "template: {}\nnev: {}\nflops: {} ({})\nparams: {} ({})\n", t.name(), arch::to_string(nev), flops,
               millions(static_cast<double>(flops)), params, millions(static_cast<double>(params)));
    if (t.baseline().flops) {
        const double b = *t.baseline().flops;
        fmt::print(out, "baseline flops: {} (deviation {:+.2f}%)\n", millions(b), 100.0 * (static_cast<double>(flops) - b) / b);
    }
    fmt::print(out, "elapsed: {:.2f} ms\n", ms);
    return kOk;
}

int cmd_reward_surface(const RunConfig& cfg, const Overrides& ov, std::ostream& out) {
    double bf = cfg.baseline_flops;
    if (!(bf > 0)) {
        const auto t = arch::ArchTemplate::load(cfg.template_path);
        bf = static_cast<double>(arch::flops_of(t, t.full_width()));
    }
    pipeline::RunOptions o;
    o.reward.baseline_accuracy = cfg.baseline_accuracy;
    o.out_dir = cfg.out;
    const double ba = pipeline::known_baseline(o);
    if (std::isnan(ba)) {
        throw std::runtime_error(fmt::format("no baseline accuracy: set reward.baseline_accuracy or measure it first ({} missing)",
                                             (o.out_dir / "baseline.json").string()));
    }
    const reward::RewardParams params{ba, bf};
    const double fmax = ov.flops_max > 0 ? ov.flops_max : bf;
    const double fmin = ov.flops_min > 0 ? ov.flops_min : bf * 0.05;
    const auto surface = reward::reward_surface(params, reward::linspace(ov.acc_min, ov.acc_max, ov.acc_steps),
                                                reward::linspace(fmin, fmax, ov.flops_steps));
    fs::create_directories(cfg.out);
    reward::write_surface_csv(surface, fs::path(cfg.out) / "reward_surface.csv");
    out << reward::surface_csv(surface);
    return kOk;
}

int cmd_distribution(const RunConfig& cfg, const Overrides& ov, std::ostream& out) {
    const auto t = arch::ArchTemplate::load(cfg.template_path);
    arch::IndexRange range{ov.lo, ov.hi};
    range.validate();
    const auto h = es::flops_distribution(t, cfg.seed, ov.samples, range, ov.bins);
    fs::create_directories(cfg.out);
    const auto path = fs::path(cfg.out) / "flops_distribution.csv";
    std::ofstream(path) << es::histogram_csv(h);
    fmt::print(out, "template: {}\nsamples: {}\nindex range: [{}, {}]\nmean flops: {} ({})\nunimodal: {}\nhistogram: {}\n",
               t.name(), ov.samples, range.lo, range.hi, h.mean, millions(h.mean), es::is_unimodal(h.counts) ? "yes" : "no",
               path.string());
    return kOk;
}

int cmd_meta_train(RunConfig cfg, const Overrides& ov, std::ostream& out) {
    if (ov.epochs) cfg.max_training = *ov.epochs;
    cfg.validate();
    const auto t = arch::ArchTemplate::load(cfg.template_path);
    const auto data = load_dataset(cfg);
    const auto o = pipeline::resolve(t, run_options(cfg));
    const auto h = pipeline::run_meta_train(t, data, o, stop_request());
    fmt::print(out, "meta-trained {} epochs; checkpoint {}\n", h.epochs_trained(), (o.out_dir / "hypernet.ckpt").string());
    return kOk;
}

int cmd_search(RunConfig cfg, const Overrides& ov, std::ostream& out) {
    if (ov.epochs) cfg.max_iter = *ov.epochs;
    cfg.validate();
    const auto t = arch::ArchTemplate::load(cfg.template_path);
    const auto data = load_dataset(cfg);
    auto o = pipeline::resolve(t, run_options(cfg));
    const auto ckpt = o.out_dir / "hypernet.ckpt";
    if (!fs::exists(ckpt)) throw std::runtime_error(fmt::format("{} not found; run meta-train first", ckpt.string()));
    const auto h = hypernet::HyperNet::from_checkpoint(t, tensorcore::load_checkpoint(ckpt));
    o.reward.baseline_accuracy = pipeline::run_baseline_phase(t, data, o, stop_request());
    const auto r = pipeline::run_search_phase(h, data, o, stop_request());
    fmt::print(out, "best nev: {}\nflops: {}\naccuracy: {:.4f}\nreward: {:.6g}\nunique genes: {}\n",
               arch::to_string(r.best.nev), r.best.flops, r.best.accuracy.value_or(0.0), r.best.reward.value_or(0.0),
               r.state.evaluated.size());
    return kOk;
}

int cmd_retrain(RunConfig cfg, const Overrides& ov, std::ostream& out) {
    if (ov.epochs) cfg.max_tuning = *ov.epochs;
    cfg.validate();
    const auto t = arch::ArchTemplate::load(cfg.template_path);
    const auto data = load_dataset(cfg);
    const auto o = pipeline::resolve(t, run_options(cfg));
    es::Gene best;
    std::size_t unique = 0;
    if (!ov.nev.empty()) {
        best = es::Gene::make(t, arch::nev_from_string(ov.nev));
    } else {
        const auto path = o.out_dir / "best_gene.json";
        if (!fs::exists(path)) throw std::runtime_error(fmt::format("{} not found; pass --nev or run search first", path.string()));
        best = pipeline::read_best_gene(path, &unique);
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto r = pipeline::run_retrain_phase(t, best.nev, data, o, stop_request());
    r.timings.retrain_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.search_reward = best.reward.value_or(std::nan(""));
    r.search_accuracy = best.accuracy.value_or(std::nan(""));
    r.unique_genes = unique;
    pipeline::write_report(r, o.out_dir / "report.json");
    out << pipeline::report_to_json(r);
    return kOk;
}

int cmd_run_all(RunConfig cfg, const Overrides& ov, std::ostream& out) {
    if (ov.meta_epochs) cfg.max_training = *ov.meta_epochs;
    if (ov.search_epochs) cfg.max_iter = *ov.search_epochs;
    if (ov.retrain_epochs) cfg.max_tuning = *ov.retrain_epochs;
    cfg.validate();
    const auto t = arch::ArchTemplate::load(cfg.template_path);
    const auto data = load_dataset(cfg);
    const auto r = pipeline::run_all(t, data, run_options(cfg), stop_request());
    out << pipeline::report_to_json(r);
    return kOk;
}

int cmd_report(const RunConfig& cfg, std::ostream& out) {
    const auto path = fs::path(cfg.out) / "report.json";
    if (!fs::exists(path)) throw std::runtime_error(fmt::format("{} not found", path.string()));
    out << pipeline::report_to_json(pipeline::read_report(path));
    return kOk;
}

}  // namespace

void install_signal_handlers() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Channel-width search with a weight-generating network", "metaprune"};
    app.require_subcommand(1);
    app.fallthrough();
    Common c;
    Overrides ov;
    app.add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", c.seed, "Root seed for every stochastic step");
    app.add_option("--workers", c.workers, "Concurrent fitness evaluations")->check(CLI::PositiveNumber);
    app.add_option("--out", c.out, "Output directory")->envname("METAPRUNE_OUT");
    app.add_option("--template", c.template_path, "Architecture template JSON");
    app.add_option("--dataset", c.dataset, "IDX dataset directory");
    app.add_option("--format", c.format, "Dataset format")->check(CLI::IsMember({"idx", "synthetic"}));

    auto* meta = app.add_subcommand("meta-train", "Train the weight generators on random NEVs");
    meta->add_option("--epochs", ov.epochs, "Total meta-training epochs (max_training)");
    auto* search = app.add_subcommand("search", "Evolutionary search with the trained generators");
    search->add_option("--epochs", ov.epochs, "Search generations (max_iter)");
    auto* retrain = app.add_subcommand("retrain", "Train the best NEV from scratch and report");
    retrain->add_option("--epochs", ov.epochs, "Retraining epochs (max_tuning)");
    retrain->add_option("--nev", ov.nev, "Comma-separated NEV (default: best_gene.json)");
    auto* all = app.add_subcommand("run-all", "meta-train, search and retrain");
    all->add_option("--meta-epochs", ov.meta_epochs, "max_training");
    all->add_option("--search-epochs", ov.search_epochs, "max_iter");
    all->add_option("--retrain-epochs", ov.retrain_epochs, "max_tuning");
    auto* flops = app.add_subcommand("flops", "Analytic FLOPs and parameters of a template");
    flops->add_option("--nev", ov.nev, "Comma-separated NEV (default: full width)");
    auto* surface = app.add_subcommand("reward-surface", "Reward over an accuracy x FLOPs grid");
    surface->add_option("--acc-min", ov.acc_min);
    surface->add_option("--acc-max", ov.acc_max);
    surface->add_option("--acc-steps", ov.acc_steps)->check(CLI::PositiveNumber);
    surface->add_option("--flops-min", ov.flops_min);
    surface->add_option("--flops-max", ov.flops_max);
    surface->add_option("--flops-steps", ov.flops_steps)->check(CLI::PositiveNumber);
    auto* dist = app.add_subcommand("distribution", "FLOPs histogram of random NEVs");
    dist->add_option("--samples", ov.samples)->check(CLI::PositiveNumber);
    dist->add_option("--bins", ov.bins)->check(CLI::PositiveNumber);
    dist->add_option("--lo", ov.lo, "Lowest slot index");
    dist->add_option("--hi", ov.hi, "Highest slot index");
    auto* report = app.add_subcommand("report", "Print the persisted run report");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsageError;
    }

    try {
        const RunConfig cfg = build_config(c);
        if (*flops) return cmd_flops(cfg, ov, out);
        if (*surface) return cmd_reward_surface(cfg, ov, out);
        if (*dist) return cmd_distribution(cfg, ov, out);
        if (*meta) return cmd_meta_train(cfg, ov, out);
        if (*search) return cmd_search(cfg, ov, out);
        if (*retrain) return cmd_retrain(cfg, ov, out);
        if (*all) return cmd_run_all(cfg, ov, out);
        if (*report) return cmd_report(cfg, out);
    } catch (const ConfigError& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kUsageError;
    } catch (const pipeline::Interrupted& e) {
        fmt::print(err, "interrupted: {}; rerun the same command to resume\n", e.what());
        return kInterrupted;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return kRuntimeError;
    }
    return kUsageError;
}

}  // namespace metaprune::cli
