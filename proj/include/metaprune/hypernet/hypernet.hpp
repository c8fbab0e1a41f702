#pragma once

// Weight-generating network. Every weighted layer owns a generator of two
// fully-connected stages (nev_length -> hidden -> full-width output). The
// output holds the full-width weight tensor followed by the scale and shift
// of the layer's normalization (or its bias), and a NEV's slice is the
// leading-channel corner of it: output channels first, then input channels.

#include <functional>
#include <optional>
#include <vector>

#include "metaprune/hypernet/network.hpp"
#include "metaprune/tensorcore/optim.hpp"

namespace metaprune::hypernet {

struct Generator {
    int layer = -1;
    Shape full_shape;                // full-width weight tensor
    std::int64_t weight_count = 0;   // elements of full_shape
    bool affine = false;             // scale/shift blocks follow the weights
    bool bias = false;               // bias block follows the weights
    std::int64_t outputs = 0;
    Var fc1_w, fc1_b, fc2_w, fc2_b;
};

class HyperNet {
public:
    HyperNet(ArchTemplate t, std::uint64_t seed, int hidden = 64);

    const ArchTemplate& arch() const { return arch_; }
    int hidden() const { return hidden_; }
    const std::vector<Generator>& generators() const { return generators_; }
    std::vector<Var> parameters() const;
    std::int64_t parameter_count() const;

    /// Meta-training epochs completed so far.
    int epochs_trained() const { return epochs_trained_; }
    void set_epochs_trained(int e) { epochs_trained_ = e; }

    /// Order-sensitive hash of every parameter bit.
    std::uint64_t checksum() const;

    tensorcore::Checkpoint to_checkpoint() const;
    /// Errors when the manifest names another template or scale grid.
    static HyperNet from_checkpoint(ArchTemplate t, const tensorcore::Checkpoint& ck);

private:
    ArchTemplate arch_;
    int hidden_;
    std::vector<Generator> generators_;
    int epochs_trained_ = 0;
};

/// Slot indices mapped to their grid fractions.
std::vector<real> normalize_nev(const Nev& nev);

struct SlicedModel {
    SlicePlan plan;
    std::vector<LayerWeights> weights;
};

/// Crops are graph views, so a loss on the sliced model reaches the generators.
SlicedModel generate_weights(const HyperNet& h, const Nev& nev);

struct MetaTrainOptions {
    int epochs = 64;  // total, counting epochs already trained
    std::size_t batch_size = 64;
    tensorcore::Schedule schedule{tensorcore::Schedule::Kind::MilestoneDecay, 0.1, 0.1, {}};
    std::uint64_t seed = 0;
    int progress_nevs = 1;              // random NEVs scored per epoch for the progress log
    std::size_t progress_samples = 500;
    std::size_t calibration_samples = 256;
};

struct MetaEpochLog {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double lr = 0.0;
    std::optional<double> validation_accuracy;
};

/// Called after every epoch; returning false stops training early.
using MetaEpochCallback = std::function<bool(const HyperNet&, const MetaEpochLog&)>;

std::vector<MetaEpochLog> meta_train(HyperNet& h, const Split& train, const Split* validation,
                                     const MetaTrainOptions& options, const MetaEpochCallback& on_epoch = {});

struct EvalOptions {
    std::size_t calibration_samples = 256;
    std::size_t chunk = 500;
};

/// Top-1 accuracy of the NEV's slice on `validation`, with normalization
/// statistics recomputed on the head of `calibration`. Read-only.
double evaluate_nev(const HyperNet& h, const Nev& nev, const Split& calibration, const Split& validation,
                    const EvalOptions& options = {});

}  // namespace metaprune::hypernet
