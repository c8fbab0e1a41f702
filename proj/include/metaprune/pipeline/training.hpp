#pragma once

// Training a single NEV's model from scratch and scoring it.

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "metaprune/hypernet/network.hpp"
#include "metaprune/tensorcore/optim.hpp"

namespace metaprune::pipeline {

using arch::ArchTemplate;
using arch::Nev;

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RetrainOptions {
    int epochs = 30;
    std::size_t batch_size = 64;
    tensorcore::Schedule schedule{tensorcore::Schedule::Kind::MilestoneDecay, 0.1, 0.1, {20, 27}};
    std::uint64_t seed = 0;
    std::size_t calibration_samples = 1024;
    std::filesystem::path checkpoint;  // written after every epoch when set; resumed from when present
};

struct TrainLog {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double lr = 0.0;
};

struct TrainedModel {
    hypernet::Model model;
    std::vector<tensorcore::NormStats> stats;
    std::vector<TrainLog> log;
    int epochs_done = 0;
};

/// Return false to stop after the current epoch; the checkpoint stays resumable.
using TrainEpochCallback = std::function<bool(const TrainLog&)>;

/// Fresh initialization, plain SGD on the train split only. Normalization
/// statistics are recomputed at the end over the head of the train split.
TrainedModel retrain(const ArchTemplate& t, const Nev& nev, const Split& train, const RetrainOptions& options,
                     const TrainEpochCallback& on_epoch = {});

struct Metrics {
    double top1_error = 0.0;
    double top5_error = 0.0;
    int top_k = 5;  // min(5, classes)
    std::int64_t flops = 0;
    std::int64_t params = 0;
    double param_ratio = 0.0;  // percent of full-width parameters
};

Metrics metrics(const ArchTemplate& t, const TrainedModel& m, const Split& validation);

}  // namespace metaprune::pipeline
