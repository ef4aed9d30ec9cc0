// SPDX-License-Identifier: Apache-2.0
#include "fewvlm/core/optim.hpp"

#include <cmath>

namespace fewvlm {

OptimizerState::OptimizerState(const ParameterStore& store, AdamWConfig cfg) : config(cfg) {
  for (const auto& p : store) {
    first_moment.emplace_back(p.value.numel(), 0.0);
    second_moment.emplace_back(p.value.numel(), 0.0);
  }
}

double global_grad_norm(const ParameterStore& store) {
  double sq = 0.0;
  for (const auto& p : store) {
    if (!p.trainable || !p.value.has_grad()) continue;
    for (double g : p.value.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (!(norm > max_norm)) return norm;
  const double factor = max_norm / norm;
  for (auto& p : store) {
    if (!p.trainable || !p.value.has_grad()) continue;
    for (double& g : p.value.mutable_grad()) g *= factor;
  }
  return norm;
}

void adamw_step(ParameterStore& store, OptimizerState& state, double max_grad_norm) {
  if (state.first_moment.size() != store.size())
    throw OptimizerError("adamw_step: optimizer state was built for a different store");
  std::size_t idx = 0;
  for (const auto& p : store) {
    if (p.trainable) {
      if (!p.value.has_grad()) throw OptimizerError("adamw_step: trainable parameter '" + p.name + "' has no grad");
      for (double g : p.value.grad())
        if (!std::isfinite(g)) throw OptimizerError("adamw_step: non-finite grad in '" + p.name + "'");
      if (state.first_moment[idx].size() != p.value.numel())
        throw OptimizerError("adamw_step: moment buffer shape mismatch for '" + p.name + "'");
    }
    ++idx;
  }
  clip_grad_norm(store, max_grad_norm);

  const AdamWConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  idx = 0;
  for (auto& p : store) {
    if (p.trainable) {
      auto w = p.value.mutable_data();
      auto g = p.value.grad();
      auto& m = state.first_moment[idx];
      auto& v = state.second_moment[idx];
      const bool decay = p.value.rank() >= 2 && c.weight_decay != 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        if (decay) w[i] -= c.lr * c.weight_decay * w[i];
        w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
      }
    }
    ++idx;
  }
  store.zero_grads();
}

double lr_schedule(double base_lr, int epoch, int period, double factor) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  return base_lr * std::pow(factor, epoch / period);
}

}  // namespace fewvlm
