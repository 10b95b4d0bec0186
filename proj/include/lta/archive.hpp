// SPDX-License-Identifier: Apache-2.0
//
// Single-file parameter archive shared by backbone and generator checkpoints.
//
// Layout (little-endian):
//   "LTAARCH1" | u64 meta_len | meta JSON | u64 count |
//   count x { u32 name_len | name | u32 dtype(=64) | u64 rows | u64 cols | f64 data[rows*cols] }
// Tensors are written in sorted-name order. meta["digest"] is the SHA-256 of the
// concatenated tensor data bytes in that same order.
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "lta/autograd.hpp"

namespace lta {

using TensorMap = std::map<std::string, Mat>;

struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  TensorMap tensors;
};

/// Hex SHA-256 over the little-endian bytes of every tensor, sorted by name.
std::string digest_tensors(const TensorMap& tensors);

/// Writes the archive; metadata["digest"] is overwritten with the computed digest.
void write_archive(const std::filesystem::path& path, Archive archive);
/// Throws IoError when unreadable and CorruptionError on truncation, bad magic
/// or digest mismatch.
Archive read_archive(const std::filesystem::path& path);

}  // namespace lta
