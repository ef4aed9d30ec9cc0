// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/core/parameters.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace fewvlm {

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kVisionEncoder: return "vision_encoder";
    case ParamGroup::kLmBlock: return "lm_block";
    case ParamGroup::kResampler: return "resampler";
    case ParamGroup::kGatedXattn: return "gated_xattn";
    case ParamGroup::kAdapter: return "adapter";
    case ParamGroup::kLayerNorm: return "layernorm";
    case ParamGroup::kScorer: return "scorer";
  }
  return "unknown";
}

Tensor ParameterStore::add(std::string name, Tensor value, ParamGroup group, bool trainable) {
  if (contains(name)) throw std::invalid_argument("parameter store: duplicate name '" + name + "'");
  value.set_requires_grad(trainable);
  params_.push_back(Parameter{std::move(name), std::move(value), trainable, group});
  return params_.back().value;
}

bool ParameterStore::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

Parameter& ParameterStore::at(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("parameter store: no parameter '" + std::string(name) + "'");
}

const Parameter& ParameterStore::at(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

void ParameterStore::set_group_trainable(ParamGroup group, bool trainable) {
  for (auto& p : params_) {
    if (p.group != group) continue;
    p.trainable = trainable;
    p.value.set_requires_grad(trainable);
  }
}

void ParameterStore::set_all_trainable(bool trainable) {
  for (auto& p : params_) {
    p.trainable = trainable;
    p.value.set_requires_grad(trainable);
  }
}

std::size_t ParameterStore::count_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::size_t ParameterStore::count_trainable_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.value.numel();
  return n;
}

bool ParameterStore::has_group(ParamGroup group) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.group == group; });
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore copy;
  for (const auto& p : params_) copy.add(p.name, p.value.clone(), p.group, p.trainable);
  return copy;
}

void ParameterStore::assign_from(const ParameterStore& other) {
  for (auto& p : params_) {
    const Parameter& src = other.at(p.name);
    if (src.value.shape() != p.value.shape())
      throw ShapeError("assign_from: '" + p.name + "' shape " + shape_str(src.value.shape()) + " vs " +
                       shape_str(p.value.shape()));
    std::copy(src.value.data().begin(), src.value.data().end(), p.value.mutable_data().begin());
    p.trainable = src.trainable;
    p.value.set_requires_grad(src.trainable);
  }
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p.value.zero_grad();
}

std::uint64_t ParameterStore::fingerprint() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& p : params_) {
    mix(p.name.data(), p.name.size());
    mix(p.value.data().data(), p.value.numel() * sizeof(double));
  }
  return h;
}

}  // namespace fewvlm
