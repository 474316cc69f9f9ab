#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cotmisr/config.hpp"
#include "cotmisr/model.hpp"

namespace cotmisr {

// Binary layout (little-endian):
//   "COTM" | u16 version | u32 len + canonical config text |
//   u32 tensor count | per tensor: u32 len + name, u32 rank, u64 extents..., f32 data
// Parameters are stored as f32 whatever the in-memory precision.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CotConfig& cfg, const ModelParams<T>& params);

template <typename T>
struct Checkpoint {
  CotConfig config;
  ModelParams<T> params;
};

// Verifies that names and shapes match the layout implied by the stored
// config. Throws DataError on any mismatch or truncation.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Named f32 tensor list with a caller-chosen 4-byte magic; used for
// optimizer state next to a checkpoint.
using NamedArrays = std::vector<std::pair<std::string, Tensor<float>>>;
void write_arrays(const std::filesystem::path& path, const char magic[4], const std::string& header,
                  const NamedArrays& arrays);
NamedArrays read_arrays(const std::filesystem::path& path, const char magic[4], std::string& header);

}  // namespace cotmisr
