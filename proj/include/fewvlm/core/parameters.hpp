// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fewvlm/core/tensor.hpp"

namespace fewvlm {

enum class ParamGroup : std::uint8_t { kVisionEncoder, kLmBlock, kResampler, kGatedXattn, kAdapter, kLayerNorm, kScorer };

std::string_view group_name(ParamGroup group);

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = false;
  ParamGroup group = ParamGroup::kLmBlock;
};

/// Ordered, uniquely-named collection of model parameters. Order is the
/// insertion order and is what checkpoints serialize.
class ParameterStore {
 public:
  /// Registers a parameter; throws std::invalid_argument on a duplicate name.
  Tensor add(std::string name, Tensor value, ParamGroup group, bool trainable);

  bool contains(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Sets `trainable` (and requires_grad on the tensor) for a whole group.
  void set_group_trainable(ParamGroup group, bool trainable);
  void set_all_trainable(bool trainable);

  std::size_t count_elements() const;
  std::size_t count_trainable_elements() const;
  bool has_group(ParamGroup group) const;

  /// Snapshot of all values, used to assert bit-identity of frozen groups.
  std::vector<std::vector<double>> snapshot() const;

  /// Deep copy: tensors are cloned, flags preserved.
  ParameterStore clone() const;

  /// Copies values and trainable flags from `other` by name. Every name of
  /// this store must be present in `other` with an identical shape.
  void assign_from(const ParameterStore& other);

  void zero_grads();

  /// Order-sensitive 64-bit FNV hash of names and raw value bits.
  std::uint64_t fingerprint() const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace fewvlm
