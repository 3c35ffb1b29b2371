// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/optim.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace qact {

template <Real T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                  double lr, double weight_decay, const AdamWConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adamw: parameter, gradient and moment sizes differ");
  }
  if (t == 0) throw std::invalid_argument("adamw: step count is 1-based");
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const T step = static_cast<T>(lr);
  const T shrink = static_cast<T>(1.0 - lr * weight_decay);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T{1} - b1) * g;
    v[i] = b2 * v[i] + (T{1} - b2) * g * g;
    const T m_hat = m[i] / bc1;
    const T v_hat = v[i] / bc2;
    param[i] = param[i] * shrink - step * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <Real T>
void adamw_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamWState<T>& state, double lr,
                double weight_decay, const AdamWConfig& cfg) {
  state.step += 1;
  std::vector<const Tensor<T>*> g;
  std::vector<Tensor<T>*> m;
  std::vector<Tensor<T>*> v;
  grads.visit([&](const std::string&, const Tensor<T>& t, bool) { g.push_back(&t); });
  state.m.visit([&](const std::string&, Tensor<T>& t, bool) { m.push_back(&t); });
  state.v.visit([&](const std::string&, Tensor<T>& t, bool) { v.push_back(&t); });
  std::size_t i = 0;
  params.visit([&](const std::string& name, Tensor<T>& p, bool decay) {
    if (i >= g.size()) throw ContractError("adamw: gradient structure does not match parameters at " + name);
    adamw_update<T>(p.data(), g[i]->data(), m[i]->data(), v[i]->data(), state.step, lr, decay ? weight_decay : 0.0,
                    cfg);
    ++i;
  });
}

double cosine_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps) {
  if (total_steps == 0) return base_lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template void adamw_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                  std::uint64_t, double, double, const AdamWConfig&);
template void adamw_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                   std::uint64_t, double, double, const AdamWConfig&);
template void adamw_step<float>(ModelParams<float>&, const ModelParams<float>&, AdamWState<float>&, double, double,
                                const AdamWConfig&);
template void adamw_step<double>(ModelParams<double>&, const ModelParams<double>&, AdamWState<double>&, double,
                                 double, const AdamWConfig&);

}  // namespace qact
