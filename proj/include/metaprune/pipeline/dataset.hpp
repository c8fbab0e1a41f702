#pragma once

// Dataset ingestion: IDX files and the procedural stroke dataset. Raw splits
// keep 8-bit pixels; normalize() applies the train split's per-channel mean
// and standard deviation to both splits.
//
// IDX directory layout: train-images.idx, train-labels.idx, val-images.idx,
// val-labels.idx. Image files use magic 0x00000803 with dims (N, H, W); label
// files use 0x00000801 with dim (N). All integers big-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaprune/data.hpp"

namespace metaprune::pipeline {

struct RawSplit {
    int channels = 1;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

struct RawDataset {
    RawSplit train;
    RawSplit validation;
    int classes = 0;
};

struct Dataset {
    Split train;
    Split validation;
    int classes = 0;
    std::vector<double> channel_mean;
    std::vector<double> channel_std;
};

struct SyntheticOptions {
    std::uint64_t seed = 0;
    std::size_t train_size = 8000;
    std::size_t validation_size = 2000;
    int classes = 10;
    int size = 28;
    double noise = 40.0;       // pixel noise sigma on the 0..255 scale
    double jitter = 2.0;       // stroke endpoint jitter, pixels
    int max_shift = 3;         // whole-image translation, pixels
    int distractors = 1;       // random strokes shared by no class
};

/// Deterministic for fixed options; sample i depends only on (seed, i).
RawDataset make_synthetic(const SyntheticOptions& options);

Dataset normalize(const RawDataset& raw);

enum class DataFormat { Idx, Synthetic };
DataFormat data_format_from_string(const std::string& s);
std::string to_string(DataFormat f);

RawDataset read_idx(const std::filesystem::path& dir);
void write_idx(const RawDataset& raw, const std::filesystem::path& dir);

RawSplit read_idx_split(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx_split(const RawSplit& split, const std::filesystem::path& images, const std::filesystem::path& labels);

/// IDX directory or, for the synthetic format, the generator (path ignored).
Dataset ingest(const std::filesystem::path& path, DataFormat format, const SyntheticOptions& synthetic = {});

}  // namespace metaprune::pipeline
