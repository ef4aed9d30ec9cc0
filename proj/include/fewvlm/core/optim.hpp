// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewvlm/core/parameters.hpp"

namespace fewvlm {

struct AdamWConfig {
  double lr = 1e-3;
  // Conventional AdamW defaults.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Moment buffers keyed by parameter position in the store.
struct OptimizerState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  explicit OptimizerState(const ParameterStore& store, AdamWConfig cfg = {});
};

/// Global L2 norm of the gradients of trainable parameters.
double global_grad_norm(const ParameterStore& store);

/// Scales trainable grads so their global norm is at most `max_norm`; grads
/// already within the bound are left untouched. Returns the pre-clip norm.
double clip_grad_norm(ParameterStore& store, double max_norm);

/// One clipped AdamW update of the trainable parameters, then clears all
/// grads. Decoupled weight decay applies to rank >= 2 tensors only.
/// Throws OptimizerError if a trainable parameter lacks a finite grad.
void adamw_step(ParameterStore& store, OptimizerState& state,
                double max_grad_norm = std::numeric_limits<double>::infinity());

/// Step decay: base_lr * factor^floor(epoch / period).
double lr_schedule(double base_lr, int epoch, int period = 4, double factor = 0.1);

}  // namespace fewvlm
