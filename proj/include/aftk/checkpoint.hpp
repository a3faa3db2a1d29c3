// SPDX-License-Identifier: Apache-2.0
//
// Binary container of named 64-bit parameter blocks:
//   "AFTK0001" | u32 block count | { u32 name length | name bytes |
//   u32 rank | u64 dims[rank] | f64 values[] }*
// All integers and floats little-endian.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aftk/tensor.hpp"

namespace aftk {

inline constexpr char kCheckpointMagic[] = "AFTK0001";

struct ParamBlock {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::vector<ParamBlock> blocks;

  void add(std::string name, Tensor value);
  const Tensor* find(const std::string& name) const;
  /// Throws IoError when missing.
  const Tensor& get(const std::string& name) const;
  /// Appends all blocks of `other` with `prefix` prepended to their names.
  void merge(const Checkpoint& other, const std::string& prefix = "");
  /// Blocks whose name starts with `prefix`, with the prefix stripped.
  Checkpoint extract(const std::string& prefix) const;
};

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes `bytes` atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace aftk
