#pragma once

// Executes a sliced template given per-layer weights. Each weighted layer runs
// op -> normalization -> (+ residual) -> relu. Normalization uses the batch's
// own statistics while training or calibrating and fixed statistics when
// evaluating.

#include <filesystem>
#include <optional>
#include <vector>

#include "metaprune/arch.hpp"
#include "metaprune/data.hpp"
#include "metaprune/rng.hpp"
#include "metaprune/tensorcore/checkpoint.hpp"
#include "metaprune/tensorcore/ops.hpp"

namespace metaprune::hypernet {

using arch::ArchTemplate;
using arch::Nev;
using tensorcore::NormStats;
using tensorcore::real;
using tensorcore::Shape;
using tensorcore::Tensor;
using tensorcore::Var;

/// Weights of one layer; unused members stay undefined.
struct LayerWeights {
    Var weight;
    Var gamma;
    Var beta;
    Var bias;
};

/// Per-layer channel bookkeeping for a NEV.
struct SlicePlan {
    Nev nev;
    std::vector<std::int64_t> out_channels;
    std::vector<std::int64_t> in_channels;  // input features for dense layers
};

SlicePlan make_plan(const ArchTemplate& t, const Nev& nev);

/// Weight tensor shape of `layer` in the plan; empty for weightless layers.
Shape weight_shape(const ArchTemplate& t, const SlicePlan& plan, int layer);

enum class NormMode { Batch, Fixed };

struct ForwardOptions {
    NormMode mode = NormMode::Batch;
    const std::vector<NormStats>* fixed_stats = nullptr;  // indexed by layer, Fixed mode
    std::vector<NormStats>* stats_out = nullptr;          // receives batch statistics, Batch mode
};

/// Logits [N, classes].
Var forward(const ArchTemplate& t, const SlicePlan& plan, const std::vector<LayerWeights>& weights, const Var& input,
            const ForwardOptions& options = {});

/// Recomputes per-layer normalization statistics with one pass over `calibration`.
std::vector<NormStats> calibrate(const ArchTemplate& t, const SlicePlan& plan, const std::vector<LayerWeights>& weights,
                                 const Split& calibration);

struct EvalResult {
    double top1 = 0.0;  // accuracy fractions
    double top5 = 0.0;
    std::size_t samples = 0;
};

/// Inference with fixed statistics, in chunks.
EvalResult evaluate(const ArchTemplate& t, const SlicePlan& plan, const std::vector<LayerWeights>& weights,
                    const std::vector<NormStats>& stats, const Split& data, std::size_t chunk = 500);

/// Rows whose label is among the k largest logits (ties broken by index).
std::size_t topk_hits(const Tensor& logits, std::span<const int> labels, int k);
double topk_accuracy(const Tensor& logits, std::span<const int> labels, int k);

/// A standalone trainable model for one NEV: uniform(+-1/sqrt(fan_in)) kernels,
/// unit scale, zero shift.
struct Model {
    SlicePlan plan;
    std::vector<LayerWeights> weights;

    std::vector<Var> parameters() const;
};

Model init_model(const ArchTemplate& t, const Nev& nev, Rng& rng);

tensorcore::Checkpoint model_checkpoint(const ArchTemplate& t, const Model& m, const std::string& extra_json = "{}");
Model model_from_checkpoint(const ArchTemplate& t, const tensorcore::Checkpoint& ck);

}  // namespace metaprune::hypernet
