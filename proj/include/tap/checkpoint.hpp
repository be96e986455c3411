#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tap/tensor.hpp"

namespace tap {

// Versioned binary container: magic, format version, a JSON metadata block and
// a list of named float32 tensors. All integers are little-endian.
//
//   "TAPCKPT\0" | u32 version | u64 meta_len | meta (UTF-8 JSON)
//   u64 count | count x { u32 name_len | name | u32 ndim | i64 dims[ndim] | f32 data }
struct CheckpointFile {
  static constexpr uint32_t kVersion = 1;

  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
  std::map<std::string, Tensor<float>> tensor_map(const std::string& prefix = "") const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// Single-tensor file using the same container with meta {"kind": "tensor"}.
void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t, const nlohmann::json& meta = {});
Tensor<float> read_tensor_file(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace tap
