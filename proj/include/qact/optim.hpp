// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "qact/model.hpp"

namespace qact {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <Real T>
struct AdamWState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::uint64_t step = 0;

  static AdamWState zeros_like(const ModelParams<T>& params) {
    return AdamWState{params.zeros_like(), params.zeros_like(), 0};
  }
};

// One tensor, decoupled weight decay:
//   p <- p * (1 - lr * wd)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// `t` is the 1-based step used for bias correction.
template <Real T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                  double lr, double weight_decay, const AdamWConfig& cfg = {});

// Advances state.step and updates every parameter. Weight decay applies only
// to parameters flagged for decay (weights and embeddings).
template <Real T>
void adamw_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamWState<T>& state, double lr,
                double weight_decay, const AdamWConfig& cfg = {});

// Cosine decay from base_lr at step 0 toward 0 at total_steps, no warmup.
double cosine_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps);

}  // namespace qact
