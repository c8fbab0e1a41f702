#pragma once

// Architecture templates, network encoding vectors (NEVs) and analytic
// FLOPs / parameter accounting.
//
// A template is a topologically ordered list of layers. Every prunable layer
// belongs to exactly one NEV slot; the slot's scale index picks one of the 31
// grid levels (10% .. 100% of the base width in steps of 3%). Depthwise and
// pooling layers carry the width of their producer.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaprune/rng.hpp"

namespace metaprune::arch {

class ArchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The fixed 31-level channel-scale grid.
class ScaleGrid {
public:
    static constexpr int kLevels = 31;
    static constexpr int kMaxIndex = kLevels - 1;

    /// Fractional width of level `index`: 0.10 + 0.03 * index.
    static double level(int index);

    /// round_half_up(base * level(index)), never below 1. Exact integer arithmetic.
    static std::int64_t scaled_width(std::int64_t base, int index);

    static std::array<double, kLevels> levels();

    /// Stable fingerprint of the grid; recorded in checkpoints.
    static std::uint64_t hash();
};

enum class LayerKind { Conv, Depthwise, Pointwise, Dense, MaxPool, GlobalAvgPool };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// Layers that own weights (and therefore a hypernetwork generator).
bool has_weights(LayerKind kind);

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int padding = 0;
    int input = -1;     // producing layer index; -1 is the network input
    int residual = -1;  // layer whose output is added after normalization; -1 for none
    bool norm = false;  // per-channel normalization with affine pair follows the op
    bool relu = false;
    bool bias = false;
    bool prunable = false;
    std::int64_t base_width = 0;  // output channels at full width
    int out_h = 0;
    int out_w = 0;
    int slot = -1;  // NEV slot for prunable layers
};

struct Slot {
    std::string name;
    std::vector<int> layers;
};

struct InputShape {
    int channels = 0;
    int height = 0;
    int width = 0;
};

struct Baseline {
    std::optional<double> flops;
    std::optional<double> params;
};

/// Strong type for a network encoding vector: one grid index per slot.
struct Nev {
    std::vector<int> slots;

    std::size_t size() const { return slots.size(); }
    int operator[](std::size_t i) const { return slots[i]; }
    int& operator[](std::size_t i) { return slots[i]; }
    auto operator<=>(const Nev&) const = default;
};

std::string to_string(const Nev& nev);
Nev nev_from_string(const std::string& s);

/// Inclusive range of allowed grid indices.
struct IndexRange {
    int lo = 0;
    int hi = ScaleGrid::kMaxIndex;

    int count() const { return hi - lo + 1; }
    bool contains(int i) const { return i >= lo && i <= hi; }
    void validate() const;
};

class ArchTemplate {
public:
    ArchTemplate(std::string name, InputShape input, std::vector<LayerSpec> layers,
                 std::vector<Slot> slots, std::vector<std::vector<int>> shortcut_groups,
                 Baseline baseline = {});

    static ArchTemplate load(const std::filesystem::path& path);
    static ArchTemplate from_json_text(const std::string& text);
    std::string to_json_text() const;

    const std::string& name() const { return name_; }
    const InputShape& input_shape() const { return input_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    const LayerSpec& layer(int i) const;
    int layer_count() const { return static_cast<int>(layers_.size()); }
    int layer_index(const std::string& name) const;
    const std::vector<Slot>& slots() const { return slots_; }
    const std::vector<std::vector<int>>& shortcut_groups() const { return shortcut_groups_; }
    const Baseline& baseline() const { return baseline_; }
    std::size_t nev_length() const { return slots_.size(); }
    int classes() const;

    Nev full_width() const;
    void check(const Nev& nev) const;

    /// Layer whose scale decides this layer's output width (follows passthrough layers).
    int width_source(int layer) const;

private:
    void validate();

    std::string name_;
    InputShape input_;
    std::vector<LayerSpec> layers_;
    std::vector<Slot> slots_;
    std::vector<std::vector<int>> shortcut_groups_;
    Baseline baseline_;
};

/// Output channel count of `layer` under `nev`.
std::int64_t channels_of(const ArchTemplate& t, const Nev& nev, int layer);

/// Output channel counts for every layer (one pass, cheaper than repeated channels_of).
std::vector<std::int64_t> channel_plan(const ArchTemplate& t, const Nev& nev);

/// Input channels (or input features for dense layers) of every layer.
std::vector<std::int64_t> input_plan(const ArchTemplate& t, const std::vector<std::int64_t>& channels);

struct LayerCost {
    std::int64_t macs = 0;
    std::int64_t params = 0;
};

std::vector<LayerCost> layer_costs(const ArchTemplate& t, const Nev& nev);

/// Multiply-accumulate count of one forward pass (1 MAC = 1 FLOP).
std::int64_t flops_of(const ArchTemplate& t, const Nev& nev);

/// Weight element count: kernels, dense matrices, biases and per-channel affine pairs.
std::int64_t params_of(const ArchTemplate& t, const Nev& nev);

Nev random_nev(const ArchTemplate& t, Rng& rng, IndexRange range = {});

}  // namespace metaprune::arch
