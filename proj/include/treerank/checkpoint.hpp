#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "treerank/tensor.hpp"

namespace treerank {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout (little-endian): "TRCK", u32 version, u32 count, then per
// tensor: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64.
void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

}  // namespace treerank
