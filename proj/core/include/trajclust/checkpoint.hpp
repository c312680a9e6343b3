#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trajclust/tensor.hpp"

namespace trajclust::nn {

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint, little-endian:
///   "TJCK" | u32 version | records...
///   record = u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace trajclust::nn
