#include "metaprune/cli/config.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace metaprune::cli {

using nlohmann::json;
namespace fs = std::filesystem;

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(fmt::format("invalid configuration:\n  - {}", fmt::join(problems, "\n  - "))),
      problems_(std::move(problems)) {}

tensorcore::Schedule ScheduleConfig::to_schedule() const {
    return {tensorcore::schedule_kind_from_string(kind), initial_lr, gamma, milestones};
}

namespace {

// Reads fields from one JSON object, recording problems instead of throwing.
class Reader {
public:
    Reader(const json& obj, std::string path, std::vector<std::string>& problems)
        : obj_(obj), path_(std::move(path)), problems_(problems) {
        if (!obj_.is_object()) {
            problems_.push_back(fmt::format("{} must be an object", where()));
            ok_ = false;
        }
    }

    template <typename T>
    void get(const std::string& key, T& dst) {
        seen_.insert(key);
        if (!ok_ || !obj_.contains(key)) return;
        try {
            dst = obj_.at(key).get<T>();
        } catch (const json::exception&) {
            problems_.push_back(fmt::format("{}.{}: expected {}, got {}", path_, key, type_name<T>(), obj_.at(key).dump()));
        }
    }

    Reader child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        if (!ok_ || !obj_.contains(key)) return Reader(empty, path_ + "." + key, problems_);
        return Reader(obj_.at(key), path_ + "." + key, problems_);
    }

    void finish() {
        if (!ok_) return;
        for (const auto& [k, v] : obj_.items()) {
            if (!seen_.count(k)) problems_.push_back(fmt::format("{}: unknown key '{}'", where(), k));
        }
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    template <typename T>
    static const char* type_name() {
        if constexpr (std::is_same_v<T, std::string>) return "a string";
        else if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else return "an array of integers";
    }

    const json& obj_;
    std::string path_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
    bool ok_ = true;
};

void read_schedule(Reader r, ScheduleConfig& s) {
    r.get("kind", s.kind);
    r.get("initial_lr", s.initial_lr);
    r.get("gamma", s.gamma);
    r.get("milestones", s.milestones);
    r.finish();
}

json schedule_json(const ScheduleConfig& s) {
    return {{"kind", s.kind}, {"initial_lr", s.initial_lr}, {"gamma", s.gamma}, {"milestones", s.milestones}};
}

void check_schedule(const ScheduleConfig& s, const std::string& name, std::vector<std::string>& p) {
    try {
        s.to_schedule().validate();
    } catch (const std::exception& e) {
        p.push_back(fmt::format("schedules.{}: {}", name, e.what()));
    }
}

}  // namespace

RunConfig config_from_json(const std::string& text, RunConfig c) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError({fmt::format("not valid JSON: {}", e.what())});
    }
    std::vector<std::string> problems;
    Reader top(j, "", problems);
    int version = 1;
    top.get("schema_version", version);
    if (version != 1) problems.push_back(fmt::format("schema_version {} is not supported (expected 1)", version));
    top.get("template", c.template_path);
    {
        auto d = top.child("dataset");
        d.get("format", c.dataset_format);
        d.get("path", c.dataset_path);
        d.get("seed", c.dataset_seed);
        d.get("train_size", c.train_size);
        d.get("validation_size", c.validation_size);
        d.get("noise", c.noise);
        d.get("jitter", c.jitter);
        d.get("max_shift", c.max_shift);
        d.get("distractors", c.distractors);
        d.finish();
    }
    {
        auto r = top.child("reward");
        r.get("baseline_accuracy", c.baseline_accuracy);
        r.get("baseline_flops", c.baseline_flops);
        r.finish();
    }
    {
        auto s = top.child("search");
        s.get("population", c.population);
        s.get("elite_archive", c.elite_archive);
        s.get("breeders", c.breeders);
        s.get("mutation_rate", c.mutation_rate);
        s.get("patience", c.patience);
        s.get("k_elite", c.k_elite);
        s.get("mutants", c.mutants);
        s.get("crossovers", c.crossovers);
        s.get("retry_budget", c.retry_budget);
        std::vector<int> range{c.index_lo, c.index_hi};
        s.get("index_range", range);
        if (range.size() == 2) {
            c.index_lo = range[0];
            c.index_hi = range[1];
        } else {
            problems.push_back("search.index_range: expected [lo, hi]");
        }
        s.get("min_flops_ratio", c.min_flops_ratio);
        s.get("max_flops_ratio", c.max_flops_ratio);
        s.finish();
    }
    {
        auto s = top.child("schedules");
        read_schedule(s.child("meta_train"), c.meta_schedule);
        read_schedule(s.child("retrain"), c.retrain_schedule);
        s.finish();
    }
    {
        auto e = top.child("epochs");
        e.get("max_training", c.max_training);
        e.get("max_iter", c.max_iter);
        e.get("max_tuning", c.max_tuning);
        e.finish();
    }
    {
        auto t = top.child("training");
        t.get("batch_size", c.batch_size);
        t.get("calibration_samples", c.calibration_samples);
        t.get("retrain_calibration_samples", c.retrain_calibration_samples);
        t.get("hidden", c.hidden);
        t.get("progress_nevs", c.progress_nevs);
        t.finish();
    }
    top.get("seed", c.seed);
    top.get("workers", c.workers);
    top.get("out", c.out);
    top.finish();
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return c;
}

std::string config_to_json(const RunConfig& c) {
    json j = {
        {"schema_version", 1},
        {"template", c.template_path},
        {"dataset",
         {{"format", c.dataset_format},
          {"path", c.dataset_path},
          {"seed", c.dataset_seed},
          {"train_size", c.train_size},
          {"validation_size", c.validation_size},
          {"noise", c.noise},
          {"jitter", c.jitter},
          {"max_shift", c.max_shift},
          {"distractors", c.distractors}}},
        {"reward", {{"baseline_accuracy", c.baseline_accuracy}, {"baseline_flops", c.baseline_flops}}},
        {"search",
         {{"population", c.population},
          {"elite_archive", c.elite_archive},
          {"breeders", c.breeders},
          {"mutation_rate", c.mutation_rate},
          {"patience", c.patience},
          {"k_elite", c.k_elite},
          {"mutants", c.mutants},
          {"crossovers", c.crossovers},
          {"retry_budget", c.retry_budget},
          {"index_range", {c.index_lo, c.index_hi}},
          {"min_flops_ratio", c.min_flops_ratio},
          {"max_flops_ratio", c.max_flops_ratio}}},
        {"schedules", {{"meta_train", schedule_json(c.meta_schedule)}, {"retrain", schedule_json(c.retrain_schedule)}}},
        {"epochs", {{"max_training", c.max_training}, {"max_iter", c.max_iter}, {"max_tuning", c.max_tuning}}},
        {"training",
         {{"batch_size", c.batch_size},
          {"calibration_samples", c.calibration_samples},
          {"retrain_calibration_samples", c.retrain_calibration_samples},
          {"hidden", c.hidden},
          {"progress_nevs", c.progress_nevs}}},
        {"seed", c.seed},
        {"workers", c.workers},
        {"out", c.out}};
    return j.dump(2) + "\n";
}

RunConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError({fmt::format("cannot open config file {}", path.string())});
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_json(ss.str());
}

void RunConfig::validate(bool check_paths) const {
    std::vector<std::string> p;
    auto need = [&](bool ok, std::string msg) {
        if (!ok) p.push_back(std::move(msg));
    };
    need(!template_path.empty(), "template: path is required");
    if (check_paths && !template_path.empty()) {
        need(fs::exists(template_path), fmt::format("template: {} does not exist", template_path));
    }
    need(dataset_format == "idx" || dataset_format == "synthetic",
         fmt::format("dataset.format: '{}' is not idx or synthetic", dataset_format));
    if (dataset_format == "idx") {
        need(!dataset_path.empty(), "dataset.path: required for the idx format");
        if (check_paths && !dataset_path.empty()) {
            need(fs::is_directory(dataset_path), fmt::format("dataset.path: {} is not a directory", dataset_path));
        }
    } else {
        need(train_size >= 2, "dataset.train_size: must be >= 2");
        need(validation_size >= 1, "dataset.validation_size: must be >= 1");
        need(noise >= 0, "dataset.noise: must be >= 0");
        need(jitter >= 0, "dataset.jitter: must be >= 0");
        need(max_shift >= 0, "dataset.max_shift: must be >= 0");
        need(distractors >= 0, "dataset.distractors: must be >= 0");
    }
    need(baseline_accuracy == 0 || (baseline_accuracy > 0 && baseline_accuracy < 1),
         "reward.baseline_accuracy: must be 0 (measure) or lie in (0, 1)");
    need(baseline_flops >= 0, "reward.baseline_flops: must be >= 0 (0 selects full-width FLOPs)");
    need(min_flops_ratio >= 0 && min_flops_ratio < max_flops_ratio && max_flops_ratio <= 1.0,
         "search.min_flops_ratio/max_flops_ratio: need 0 <= min < max <= 1");
    {
        evosearch::SearchConfig s;
        s.population = population;
        s.elite_archive = elite_archive;
        s.breeders = breeders;
        s.mutation_rate = mutation_rate;
        s.epochs = max_iter;
        s.patience = patience;
        s.k_elite = k_elite;
        s.mutants = mutants;
        s.crossovers = crossovers;
        s.retry_budget = retry_budget;
        s.index_range = {index_lo, index_hi};
        s.workers = workers;
        s.min_flops = 1;  // window is resolved against the template later
        s.max_flops = 2;
        try {
            s.validate();
        } catch (const evosearch::ConfigError& e) {
            p.push_back(fmt::format("search: {}", e.what()));
        }
    }
    check_schedule(meta_schedule, "meta_train", p);
    check_schedule(retrain_schedule, "retrain", p);
    need(max_training >= 0, "epochs.max_training: must be >= 0");
    need(max_iter >= 0, "epochs.max_iter: must be >= 0");
    need(max_tuning >= 0, "epochs.max_tuning: must be >= 0");
    need(batch_size >= 2, "training.batch_size: must be >= 2");
    need(calibration_samples >= 2, "training.calibration_samples: must be >= 2");
    need(retrain_calibration_samples >= 2, "training.retrain_calibration_samples: must be >= 2");
    need(hidden >= 1, "training.hidden: must be >= 1");
    need(progress_nevs >= 0, "training.progress_nevs: must be >= 0");
    need(workers >= 1, "workers: must be >= 1");
    need(!out.empty(), "out: output directory is required");
    if (!p.empty()) throw ConfigError(std::move(p));
}

pipeline::SyntheticOptions synthetic_options(const RunConfig& c) {
    pipeline::SyntheticOptions o;
    o.seed = c.dataset_seed;
    o.train_size = c.train_size;
    o.validation_size = c.validation_size;
    o.noise = c.noise;
    o.jitter = c.jitter;
    o.max_shift = c.max_shift;
    o.distractors = c.distractors;
    return o;
}

pipeline::Dataset load_dataset(const RunConfig& c) {
    return pipeline::ingest(c.dataset_path, pipeline::data_format_from_string(c.dataset_format), synthetic_options(c));
}

pipeline::RunOptions run_options(const RunConfig& c) {
    pipeline::RunOptions o;
    o.seed = c.seed;
    o.out_dir = c.out;
    o.meta.epochs = c.max_training;
    o.meta.batch_size = static_cast<std::size_t>(c.batch_size);
    o.meta.schedule = c.meta_schedule.to_schedule();
    o.meta.progress_nevs = c.progress_nevs;
    o.meta.calibration_samples = static_cast<std::size_t>(c.calibration_samples);
    o.search.population = c.population;
    o.search.elite_archive = c.elite_archive;
    o.search.breeders = c.breeders;
    o.search.mutation_rate = c.mutation_rate;
    o.search.epochs = c.max_iter;
    o.search.patience = c.patience;
    o.search.k_elite = c.k_elite;
    o.search.mutants = c.mutants;
    o.search.crossovers = c.crossovers;
    o.search.retry_budget = c.retry_budget;
    o.search.index_range = {c.index_lo, c.index_hi};
    o.search.workers = c.workers;
    o.retrain.epochs = c.max_tuning;
    o.retrain.batch_size = static_cast<std::size_t>(c.batch_size);
    o.retrain.schedule = c.retrain_schedule.to_schedule();
    o.retrain.calibration_samples = static_cast<std::size_t>(c.retrain_calibration_samples);
    o.reward = {c.baseline_accuracy, c.baseline_flops};
    o.min_flops_ratio = c.min_flops_ratio;
    o.max_flops_ratio = c.max_flops_ratio;
    o.hidden = c.hidden;
    return o;
}

}  // namespace metaprune::cli
