#pragma once

// Run configuration (JSON). Every field is optional in the file; omitted
// fields keep the defaults below. Schema (schema_version 1):
//
//   {
//     "schema_version": 1,
//     "template": "templates/mininet.json",
//     "dataset": {"format": "synthetic", "path": "", "seed": 0, "train_size": 8000,
//                 "validation_size": 2000, "noise": 40, "jitter": 2, "max_shift": 3, "distractors": 1},
//     "reward": {"baseline_accuracy": 0, "baseline_flops": 0},
//     "search": {"population": 50, "elite_archive": 50, "breeders": 10, "mutation_rate": 0.1,
//                "patience": 5, "k_elite": 2, "mutants": 24, "crossovers": 14, "retry_budget": 100,
//                "index_range": [0, 30], "min_flops_ratio": 0.3, "max_flops_ratio": 0.7},
//     "schedules": {"meta_train": {"kind": "milestone", "initial_lr": 0.5, "gamma": 0.1, "milestones": [40, 56]},
//                   "retrain": {"kind": "milestone", "initial_lr": 0.5, "gamma": 0.1, "milestones": [20, 27]}},
//     "epochs": {"max_training": 64, "max_iter": 20, "max_tuning": 30},
//     "training": {"batch_size": 64, "calibration_samples": 256, "retrain_calibration_samples": 1024,
//                  "hidden": 64, "progress_nevs": 1},
//     "seed": 0, "workers": 1, "out": "out"
//   }
//
// baseline_accuracy 0 means the validation accuracy of the full-width model
// trained with the retrain settings (measured once, kept in baseline.json).
// baseline_flops 0 means the template's full-width FLOPs.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaprune/pipeline/pipeline.hpp"

namespace metaprune::cli {

class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

struct ScheduleConfig {
    std::string kind = "milestone";
    double initial_lr = 0.5;
    double gamma = 0.1;
    std::vector<int> milestones;

    bool operator==(const ScheduleConfig&) const = default;
    tensorcore::Schedule to_schedule() const;
};

struct RunConfig {
    std::string template_path = "templates/mininet.json";

    std::string dataset_format = "synthetic";
    std::string dataset_path;
    std::uint64_t dataset_seed = 0;
    std::size_t train_size = 8000;
    std::size_t validation_size = 2000;
    double noise = 40.0;
    double jitter = 2.0;
    int max_shift = 3;
    int distractors = 1;

    double baseline_accuracy = 0.0;
    double baseline_flops = 0.0;

    int population = 50;
    int elite_archive = 50;
    int breeders = 10;
    double mutation_rate = 0.10;
    int patience = 5;
    int k_elite = 2;
    int mutants = 24;
    int crossovers = 14;
    int retry_budget = 100;
    int index_lo = 0;
    int index_hi = 30;
    double min_flops_ratio = 0.3;
    double max_flops_ratio = 0.7;

    ScheduleConfig meta_schedule{"milestone", 0.5, 0.1, {40, 56}};
    ScheduleConfig retrain_schedule{"milestone", 0.5, 0.1, {20, 27}};

    int max_training = 64;
    int max_iter = 20;
    int max_tuning = 30;

    int batch_size = 64;
    int calibration_samples = 256;
    int retrain_calibration_samples = 1024;
    int hidden = 64;
    int progress_nevs = 1;

    std::uint64_t seed = 0;
    int workers = 1;
    std::string out = "out";

    bool operator==(const RunConfig&) const = default;

    /// Throws ConfigError naming every violated field. `check_paths` also
    /// requires the template (and IDX dataset directory) to exist.
    void validate(bool check_paths = true) const;
};

/// Overlays the file's fields on `base`; unknown keys and type errors are
/// collected and reported together.
RunConfig config_from_json(const std::string& text, RunConfig base = {});
std::string config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

pipeline::SyntheticOptions synthetic_options(const RunConfig& c);
pipeline::Dataset load_dataset(const RunConfig& c);
pipeline::RunOptions run_options(const RunConfig& c);

}  // namespace metaprune::cli
