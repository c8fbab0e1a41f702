#pragma once

// Binary checkpoint: named tensors plus a free-form metadata string.
// Layout (little-endian):
//   u32 magic "MPCK", u32 version (1),
//   u64 metadata length, metadata bytes,
//   u64 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[numel]

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "metaprune/tensorcore/tensor.hpp"

namespace metaprune::tensorcore {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    std::string metadata;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes through a temporary file and a rename, so a crash never leaves a
/// half-written checkpoint under the final name.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metaprune::tensorcore
