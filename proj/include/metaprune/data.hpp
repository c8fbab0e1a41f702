#pragma once

// In-memory image split shared by training, evaluation and ingestion.

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

#include "metaprune/tensorcore/tensor.hpp"

namespace metaprune {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Split {
    int channels = 0;
    int height = 0;
    int width = 0;
    int classes = 0;
    std::vector<tensorcore::real> images;  // N*C*H*W, normalized
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_size() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }

    void check() const {
        if (images.size() != labels.size() * image_size()) {
            throw DataError(fmt::format("split holds {} values for {} labels of {}x{}x{}", images.size(),
                                        labels.size(), channels, height, width));
        }
        for (int y : labels) {
            if (y < 0 || y >= classes) throw DataError(fmt::format("label {} outside [0, {})", y, classes));
        }
    }

    /// Stacks the listed samples into an [n, C, H, W] tensor.
    tensorcore::Tensor gather(std::span<const std::size_t> idx) const {
        const std::size_t s = image_size();
        tensorcore::Tensor t({static_cast<std::int64_t>(idx.size()), channels, height, width});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto* src = images.data() + idx[i] * s;
            std::copy(src, src + s, t.data() + i * s);
        }
        return t;
    }

    std::vector<int> gather_labels(std::span<const std::size_t> idx) const {
        std::vector<int> out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(labels[i]);
        return out;
    }

    /// First `n` samples (or all of them).
    Split head(std::size_t n) const {
        Split out = *this;
        n = std::min(n, size());
        out.labels.resize(n);
        out.images.resize(n * image_size());
        return out;
    }
};

}  // namespace metaprune
