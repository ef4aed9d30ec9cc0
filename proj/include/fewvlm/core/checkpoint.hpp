// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewvlm/core/parameters.hpp"

namespace fewvlm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One serialized parameter. Groups are not part of the file; they are
/// recovered from the model structure on load.
struct CheckpointRecord {
  std::string name;
  Shape shape;
  bool trainable = false;
  std::vector<double> values;
};

// Layout (little-endian):
//   "VLMCKPT1" | u32 count | count x { u16 name_len | name | u8 rank |
//   u32 extents[rank] | u8 trainable | f64 payload[numel] }
std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

std::vector<CheckpointRecord> records_of(const ParameterStore& store);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

/// Copies values and trainable flags into an existing store by name. The
/// record set must match the store's names and shapes exactly.
void load_checkpoint_into(const std::filesystem::path& path, ParameterStore& store);
void apply_records(const std::vector<CheckpointRecord>& records, ParameterStore& store);

}  // namespace fewvlm
