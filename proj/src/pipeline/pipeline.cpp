#include "metaprune/pipeline/pipeline.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

namespace metaprune::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;
namespace tc = tensorcore;
namespace hn = hypernet;
namespace es = evosearch;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_text(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error(fmt::format("cannot open {}", p.string()));
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_atomic(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
        f << text;
    }
    fs::rename(tmp, p);
}

json number_or_null(double v) {
    return std::isfinite(v) ? json(v) : json(nullptr);
}

double number_or_nan(const json& j) {
    return j.is_null() ? std::nan("") : j.get<double>();
}

json nev_json(const Nev& n) {
    return n.slots;
}

Nev nev_from_json(const json& j) {
    return Nev{j.get<std::vector<int>>()};
}

}  // namespace

std::string report_to_json(const RunReport& r, bool with_timings) {
    json j = {{"schema_version", r.schema_version},
              {"template", r.template_name},
              {"seed", r.seed},
              {"best_nev", nev_json(r.best)},
              {"search_reward", number_or_null(r.search_reward)},
              {"search_accuracy", number_or_null(r.search_accuracy)},
              {"unique_genes", r.unique_genes},
              {"baseline_accuracy", number_or_null(r.baseline_accuracy)},
              {"top1_error", number_or_null(r.top1_error)},
              {"top5_error", number_or_null(r.top5_error)},
              {"top_k", r.top_k},
              {"flops", r.flops},
              {"full_flops", r.full_flops},
              {"params", r.params},
              {"param_ratio", number_or_null(r.param_ratio)}};
    if (with_timings) {
        j["timings"] = {{"meta_train_s", r.timings.meta_train_s},
                        {"baseline_s", r.timings.baseline_s},
                        {"search_s", r.timings.search_s},
                        {"retrain_s", r.timings.retrain_s}};
    }
    return j.dump(2) + "\n";
}

RunReport report_from_json(const std::string& text) {
    const json j = json::parse(text);
    const int version = j.at("schema_version").get<int>();
    if (version != kReportSchemaVersion) {
        throw std::runtime_error(fmt::format("report schema_version {} is not supported", version));
    }
    RunReport r;
    r.template_name = j.at("template").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.best = nev_from_json(j.at("best_nev"));
    r.search_reward = number_or_nan(j.at("search_reward"));
    r.search_accuracy = number_or_nan(j.at("search_accuracy"));
    r.unique_genes = j.at("unique_genes").get<std::size_t>();
    r.baseline_accuracy = number_or_nan(j.at("baseline_accuracy"));
    r.top1_error = number_or_nan(j.at("top1_error"));
    r.top5_error = number_or_nan(j.at("top5_error"));
    r.top_k = j.at("top_k").get<int>();
    r.flops = j.at("flops").get<std::int64_t>();
    r.full_flops = j.at("full_flops").get<std::int64_t>();
    r.params = j.at("params").get<std::int64_t>();
    r.param_ratio = number_or_nan(j.at("param_ratio"));
    if (j.contains("timings")) {
        const auto& t = j["timings"];
        r.timings = {t.at("meta_train_s").get<double>(), t.at("baseline_s").get<double>(), t.at("search_s").get<double>(),
                     t.at("retrain_s").get<double>()};
    }
    return r;
}

void write_report(const RunReport& r, const fs::path& path) {
    write_text_atomic(path, report_to_json(r));
}

RunReport read_report(const fs::path& path) {
    return report_from_json(read_text(path));
}

void write_best_gene(const es::Gene& g, std::size_t unique_genes, const fs::path& path) {
    json j = {{"schema_version", 1},
              {"nev", nev_json(g.nev)},
              {"flops", g.flops},
              {"accuracy", g.accuracy ? json(*g.accuracy) : json(nullptr)},
              {"reward", g.reward ? json(*g.reward) : json(nullptr)},
              {"unique_genes", unique_genes}};
    write_text_atomic(path, j.dump(2) + "\n");
}

es::Gene read_best_gene(const fs::path& path, std::size_t* unique_genes) {
    const json j = json::parse(read_text(path));
    es::Gene g;
    g.nev = nev_from_json(j.at("nev"));
    g.flops = j.at("flops").get<std::int64_t>();
    if (!j.at("accuracy").is_null()) g.accuracy = j["accuracy"].get<double>();
    if (!j.at("reward").is_null()) g.reward = j["reward"].get<double>();
    if (unique_genes) *unique_genes = j.value("unique_genes", std::size_t{0});
    return g;
}

RunOptions resolve(const ArchTemplate& t, RunOptions o) {
    o.meta.seed = derive_seed(o.seed, "meta-train");
    o.search.seed = derive_seed(o.seed, "search");
    o.retrain.seed = derive_seed(o.seed, "retrain");
    o.retrain.checkpoint = o.out_dir / "retrain.ckpt";
    o.eval.calibration_samples = o.meta.calibration_samples;
    const auto full = arch::flops_of(t, t.full_width());
    if (!(o.reward.baseline_flops > 0.0)) o.reward.baseline_flops = static_cast<double>(full);
    if (o.search.max_flops == 0) {
        o.search.min_flops = static_cast<std::int64_t>(std::floor(o.min_flops_ratio * static_cast<double>(full)));
        o.search.max_flops = static_cast<std::int64_t>(std::floor(o.max_flops_ratio * static_cast<double>(full)));
    }
    return o;
}

hn::HyperNet run_meta_train(const ArchTemplate& t, const Dataset& data, const RunOptions& o, const StopRequest& stop) {
    fs::create_directories(o.out_dir);
    const auto ckpt = o.out_dir / "hypernet.ckpt";
    const auto log_path = o.out_dir / "meta_train_log.csv";
    hn::HyperNet h = fs::exists(ckpt) ? hn::HyperNet::from_checkpoint(t, tc::load_checkpoint(ckpt))
                                      : hn::HyperNet(t, derive_seed(o.seed, "hypernet"), o.hidden);
    if (h.epochs_trained() == 0) {
        std::ofstream(log_path, std::ios::trunc) << "# schema_version=1\nepoch,mean_loss,lr,validation_accuracy\n";
    }
    bool interrupted = false;
    hn::meta_train(h, data.train, &data.validation, o.meta, [&](const hn::HyperNet& cur, const hn::MetaEpochLog& e) {
        tc::save_checkpoint(ckpt, cur.to_checkpoint());
        std::ofstream(log_path, std::ios::app)
            << fmt::format("{},{:.17g},{:.17g},{}\n", e.epoch, e.mean_loss, e.lr,
                           e.validation_accuracy ? fmt::format("{:.17g}", *e.validation_accuracy) : std::string("nan"));
        if (stop && stop("meta-train", e.epoch)) {
            interrupted = true;
            return false;
        }
        return true;
    });
    if (interrupted && h.epochs_trained() < o.meta.epochs) {
        throw Interrupted(fmt::format("meta-training stopped after epoch {}", h.epochs_trained()));
    }
    return h;
}

double known_baseline(const RunOptions& o) {
    if (o.reward.baseline_accuracy > 0.0) return o.reward.baseline_accuracy;
    const auto path = o.out_dir / "baseline.json";
    if (fs::exists(path)) return json::parse(read_text(path)).at("accuracy").get<double>();
    return std::nan("");
}

double run_baseline_phase(const ArchTemplate& t, const Dataset& data, const RunOptions& o, const StopRequest& stop) {
    if (const double known = known_baseline(o); !std::isnan(known)) return known;
    const auto path = o.out_dir / "baseline.json";
    fs::create_directories(o.out_dir);
    auto ro = o.retrain;
    ro.seed = derive_seed(o.seed, "baseline");
    ro.checkpoint = o.out_dir / "baseline.ckpt";
    bool interrupted = false;
    const auto trained = retrain(t, t.full_width(), data.train, ro, [&](const TrainLog& e) {
        if (stop && stop("baseline", e.epoch)) {
            interrupted = true;
            return false;
        }
        return true;
    });
    if (interrupted && trained.epochs_done < ro.epochs) {
        throw Interrupted(fmt::format("baseline training stopped after epoch {}", trained.epochs_done));
    }
    const auto m = metrics(t, trained, data.validation);
    const double acc = 1.0 - m.top1_error;
    if (!(acc > 0.0 && acc < 1.0)) {
        throw std::runtime_error(fmt::format("baseline accuracy {} is outside (0, 1); set reward.baseline_accuracy", acc));
    }
    json j = {{"schema_version", 1}, {"accuracy", acc}, {"top1_error", m.top1_error}, {"epochs", trained.epochs_done}};
    write_text_atomic(path, j.dump(2) + "\n");
    return acc;
}

es::SearchResult run_search_phase(const hn::HyperNet& h, const Dataset& data, const RunOptions& o,
                                  const StopRequest& stop) {
    if (!(o.reward.baseline_accuracy > 0.0)) {
        throw std::invalid_argument("search needs a baseline accuracy; run the baseline phase first");
    }
    fs::create_directories(o.out_dir);
    const auto& t = h.arch();
    const auto state_path = o.out_dir / "search_state.json";
    std::optional<es::SearchState> resume;
    if (fs::exists(state_path)) resume = es::load_state(state_path);

    std::mutex mu;
    std::map<Nev, double> cache;
    const es::Fitness fitness = [&](const Nev& nev) {
        {
            std::lock_guard lock(mu);
            if (auto it = cache.find(nev); it != cache.end()) return it->second;
        }
        const double acc = hn::evaluate_nev(h, nev, data.train, data.validation, o.eval);
        std::lock_guard lock(mu);
        cache.emplace(nev, acc);
        return acc;
    };
    const reward::AccuracyFlopsReward model(o.reward);
    bool interrupted = false;
    auto result = es::run_search(t, o.search, fitness, model, resume, [&](const es::SearchState& s) {
        es::save_state(s, state_path);
        es::write_history_csv(s.history, o.out_dir / "search_history.csv");
        if (!s.finished && stop && stop("search", s.epoch)) {
            interrupted = true;
            return false;
        }
        return true;
    });
    if (interrupted && !result.state.finished) {
        throw Interrupted(fmt::format("search stopped after epoch {}", result.state.epoch));
    }
    es::save_state(result.state, state_path);
    es::write_history_csv(result.history, o.out_dir / "search_history.csv");
    write_best_gene(result.best, result.state.evaluated.size(), o.out_dir / "best_gene.json");
    return result;
}

RunReport run_retrain_phase(const ArchTemplate& t, const Nev& best, const Dataset& data, const RunOptions& o,
                            const StopRequest& stop) {
    fs::create_directories(o.out_dir);
    bool interrupted = false;
    const auto trained = retrain(t, best, data.train, o.retrain, [&](const TrainLog& e) {
        if (stop && stop("retrain", e.epoch)) {
            interrupted = true;
            return false;
        }
        return true;
    });
    if (interrupted && trained.epochs_done < o.retrain.epochs) {
        throw Interrupted(fmt::format("retraining stopped after epoch {}", trained.epochs_done));
    }
    const auto m = metrics(t, trained, data.validation);
    RunReport r;
    r.template_name = t.name();
    r.seed = o.seed;
    r.best = best;
    r.top1_error = m.top1_error;
    r.top5_error = m.top5_error;
    r.top_k = m.top_k;
    r.flops = m.flops;
    r.full_flops = arch::flops_of(t, t.full_width());
    r.params = m.params;
    r.param_ratio = m.param_ratio;
    r.baseline_accuracy = known_baseline(o);
    return r;
}

RunReport run_all(const ArchTemplate& t, const Dataset& data, const RunOptions& options, const StopRequest& stop) {
    auto o = resolve(t, options);
    o.search.validate();
    PhaseTimings timings;

    auto t0 = std::chrono::steady_clock::now();
    const auto best_path = o.out_dir / "best_gene.json";
    es::Gene best;
    std::size_t unique = 0;
    const auto state_path = o.out_dir / "search_state.json";
    const bool search_done = fs::exists(best_path) && fs::exists(state_path) && es::load_state(state_path).finished;
    if (search_done) {
        best = read_best_gene(best_path, &unique);
    } else {
        const auto h = run_meta_train(t, data, o, stop);
        timings.meta_train_s = seconds_since(t0);
        t0 = std::chrono::steady_clock::now();
        o.reward.baseline_accuracy = run_baseline_phase(t, data, o, stop);
        timings.baseline_s = seconds_since(t0);
        t0 = std::chrono::steady_clock::now();
        const auto result = run_search_phase(h, data, o, stop);
        best = result.best;
        unique = result.state.evaluated.size();
        timings.search_s = seconds_since(t0);
    }

    t0 = std::chrono::steady_clock::now();
    RunReport r = run_retrain_phase(t, best.nev, data, o, stop);
    timings.retrain_s = seconds_since(t0);

    r.search_reward = best.reward.value_or(std::nan(""));
    r.search_accuracy = best.accuracy.value_or(std::nan(""));
    r.unique_genes = unique;
    r.timings = timings;
    write_report(r, o.out_dir / "report.json");
    return r;
}

}  // namespace metaprune::pipeline
