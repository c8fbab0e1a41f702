#pragma once

// meta-train -> search -> retrain, with per-phase checkpoints in the output
// directory:
//   hypernet.ckpt        generator parameters (after every meta-train epoch)
//   meta_train_log.csv
//   baseline.ckpt        full-width base model (after every epoch), when the
//   baseline.json        reward's baseline accuracy is measured
//   search_state.json    evolution state (after every search epoch)
//   search_history.csv
//   best_gene.json
//   retrain.ckpt         retrained parameters (after every retrain epoch)
//   report.json

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "metaprune/evosearch.hpp"
#include "metaprune/hypernet/hypernet.hpp"
#include "metaprune/pipeline/dataset.hpp"
#include "metaprune/pipeline/training.hpp"
#include "metaprune/reward.hpp"

namespace metaprune::pipeline {

inline constexpr int kReportSchemaVersion = 1;

/// Thrown when a stop request interrupts a run; checkpoints are left resumable.
class Interrupted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunOptions {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    hypernet::MetaTrainOptions meta;     // meta.epochs is max_training
    evosearch::SearchConfig search;      // search.epochs is max_iter
    RetrainOptions retrain;              // retrain.epochs is max_tuning
    hypernet::EvalOptions eval;
    // baseline_accuracy <= 0: accuracy of the full-width model trained like the
    // final retrain (baseline phase); baseline_flops <= 0: full-width FLOPs
    reward::RewardParams reward{0.0, 0.0};
    double min_flops_ratio = 0.3;        // search window as fractions of full-width FLOPs,
    double max_flops_ratio = 0.7;        // used when search.max_flops is 0
    int hidden = 64;
};

struct PhaseTimings {
    double meta_train_s = 0.0;
    double baseline_s = 0.0;
    double search_s = 0.0;
    double retrain_s = 0.0;
};

struct RunReport {
    int schema_version = kReportSchemaVersion;
    std::string template_name;
    std::uint64_t seed = 0;
    Nev best;
    double search_reward = 0.0;
    double search_accuracy = 0.0;
    std::size_t unique_genes = 0;
    double baseline_accuracy = 0.0;  // b_a the search used
    double top1_error = 0.0;
    double top5_error = 0.0;
    int top_k = 5;
    std::int64_t flops = 0;
    std::int64_t full_flops = 0;
    std::int64_t params = 0;
    double param_ratio = 0.0;
    PhaseTimings timings;
};

std::string report_to_json(const RunReport& r, bool with_timings = true);
RunReport report_from_json(const std::string& text);
void write_report(const RunReport& r, const std::filesystem::path& path);
RunReport read_report(const std::filesystem::path& path);

/// Consulted after every epoch of every phase; returning true interrupts.
using StopRequest = std::function<bool(std::string_view phase, int epoch)>;

/// Derives the per-phase seeds from options.seed and resolves the FLOPs window.
RunOptions resolve(const ArchTemplate& t, RunOptions options);

/// Phases, usable on their own. Each resumes from its checkpoint when present.
hypernet::HyperNet run_meta_train(const ArchTemplate& t, const Dataset& data, const RunOptions& resolved,
                                  const StopRequest& stop = {});
/// Configured baseline accuracy, else the one recorded in baseline.json, else NaN.
double known_baseline(const RunOptions& o);
/// Accuracy used as the reward baseline: the configured value, or the
/// validation accuracy of a full-width model trained with the retrain settings
/// (cached in baseline.json).
double run_baseline_phase(const ArchTemplate& t, const Dataset& data, const RunOptions& resolved,
                          const StopRequest& stop = {});
/// Needs resolved.reward.baseline_accuracy > 0 (see run_baseline_phase).
evosearch::SearchResult run_search_phase(const hypernet::HyperNet& h, const Dataset& data, const RunOptions& resolved,
                                         const StopRequest& stop = {});
RunReport run_retrain_phase(const ArchTemplate& t, const Nev& best, const Dataset& data, const RunOptions& resolved,
                            const StopRequest& stop = {});

RunReport run_all(const ArchTemplate& t, const Dataset& data, const RunOptions& options, const StopRequest& stop = {});

/// best_gene.json
void write_best_gene(const evosearch::Gene& g, std::size_t unique_genes, const std::filesystem::path& path);
evosearch::Gene read_best_gene(const std::filesystem::path& path, std::size_t* unique_genes = nullptr);

}  // namespace metaprune::pipeline
