// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "qact/tensor.hpp"

// Pure tensor functions used by the layers. Each one checks its output for
// NaN/Inf and throws NumericalError instead of letting it propagate.
namespace qact::ops {

// a[..., m, k] x b[..., k, n] -> [..., m, n]; leading dims must match exactly.
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Swaps the last two axes.
template <Real T>
Tensor<T> transpose(const Tensor<T>& x);

// out.shape[i] = x.shape[perm[i]].
template <Real T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

// Max-subtracted softmax along `axis`.
template <Real T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes over the last axis, then applies gamma/beta of that length.
template <Real T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// Exact x * Phi(x).
template <Real T>
Tensor<T> gelu(const Tensor<T>& x);

// d/dx gelu = Phi(x) + x * phi(x).
template <Real T>
Tensor<T> gelu_derivative(const Tensor<T>& x);

template <Real T>
T gelu_scalar(T x);

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <Real T>
Tensor<T> scale(const Tensor<T>& a, T s);

// x[..., D] + bias[D]
template <Real T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <Real T>
T sum(const Tensor<T>& x);
template <Real T>
T mean(const Tensor<T>& x);

// Reduces `axis` away.
template <Real T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);
template <Real T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

template <Real T>
std::pair<T, T> min_max(const Tensor<T>& x);

}  // namespace qact::ops
