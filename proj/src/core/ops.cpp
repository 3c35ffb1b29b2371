// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qact/simd/kernels.hpp"

namespace qact::ops {
namespace {

template <Real T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_axis(std::size_t axis, std::size_t rank, const char* op) {
  if (axis >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
}

// outer x axis x inner factorization around `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <Real T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active_kernels().gemm(a, b, c, m, k, n);
  } else {
    std::fill(c, c + m * n, T{0});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = a[i * k + p];
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = c[i * n + j] + aip * b[p * n + j];
      }
    }
  }
}

template <Real T>
T normal_cdf(T x) {
  return T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <Real T>
T normal_pdf(T x) {
  return std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * std::numbers::pi_v<T>);
}

}  // namespace

template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto fail = [&] {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  };
  if (a.rank() < 2 || a.rank() != b.rank()) fail();
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) fail();
  }
  const std::size_t m = a.dim(r - 2);
  const std::size_t k = a.dim(r - 1);
  const std::size_t n = b.dim(r - 1);
  if (b.dim(r - 2) != k) fail();

  Shape out_shape = a.shape();
  out_shape[r - 1] = n;
  Tensor<T> out(out_shape);
  const std::size_t batch = a.numel() / (m * k);
  for (std::size_t s = 0; s < batch; ++s) {
    gemm(a.data().data() + s * m * k, b.data().data() + s * k * n, out.data().data() + s * m * n, m, k,
         n);
  }
  ensure_finite(out, "matmul");
  return out;
}

template <Real T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank must be >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[x.rank() - 1], perm[x.rank() - 2]);
  return permute(x, perm);
}

template <Real T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: permutation length does not match rank");
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);

  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  std::vector<std::size_t> strides(r);
  for (std::size_t i = 0; i < r; ++i) strides[i] = in_strides[perm[i]];

  Tensor<T> out(out_shape);
  std::vector<std::size_t> idx(r, 0);
  auto src = x.data();
  auto dst = out.data();
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < dst.size(); ++flat) {
    dst[flat] = src[offset];
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      offset += strides[d];
      if (idx[d] < out_shape[d]) break;
      offset -= strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <Real T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto y = out.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = in[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      T total = 0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const T e = std::exp(in[base + j * s.inner] - mx);
        y[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) y[base + j * s.inner] /= total;
    }
  }
  ensure_finite(out, "softmax");
  return out;
}

template <Real T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (!(eps > T{0})) throw std::invalid_argument("layernorm: eps must be positive");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layernorm: gamma/beta must have shape (" + std::to_string(d) + ")");
  }
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto y = out.data();
  const std::size_t rows = x.numel() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T rstd = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = (row[j] - mu) * rstd * gamma[j] + beta[j];
  }
  ensure_finite(out, "layernorm");
  return out;
}

template <Real T>
T gelu_scalar(T x) {
  return x * normal_cdf(x);
}

template <Real T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) y[i] = gelu_scalar(in[i]);
  ensure_finite(out, "gelu");
  return out;
}

template <Real T>
Tensor<T> gelu_derivative(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) y[i] = normal_cdf(in[i]) + in[i] * normal_pdf(in[i]);
  ensure_finite(out, "gelu_derivative");
  return out;
}

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  ensure_finite(out, "add");
  return out;
}

template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  ensure_finite(out, "sub");
  return out;
}

template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  ensure_finite(out, "mul");
  return out;
}

template <Real T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * s;
  ensure_finite(out, "scale");
  return out;
}

template <Real T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (bias.shape() != Shape{d}) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + bias[i % d];
  ensure_finite(out, "add_bias");
  return out;
}

template <Real T>
T sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return total;
}

template <Real T>
T mean(const Tensor<T>& x) {
  return sum(x) / static_cast<T>(x.numel());
}

template <Real T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  require_axis(axis, x.rank(), "sum_axis");
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.len; ++j) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        out[o * s.inner + i] += x[(o * s.len + j) * s.inner + i];
      }
    }
  }
  ensure_finite(out, "sum_axis");
  return out;
}

template <Real T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  require_axis(axis, x.rank(), "mean_axis");
  return scale(sum_axis(x, axis), T{1} / static_cast<T>(x.dim(axis)));
}

template <Real T>
std::pair<T, T> min_max(const Tensor<T>& x) {
  if (x.empty()) throw DimensionError("min_max: empty tensor");
  if constexpr (std::is_same_v<T, float>) {
    float lo = 0.0f;
    float hi = 0.0f;
    simd::active_kernels().min_max(x.data().data(), x.numel(), &lo, &hi);
    return {lo, hi};
  } else {
    auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
    return {*lo, *hi};
  }
}

#define QACT_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> transpose(const Tensor<T>&);                                        \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);         \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> gelu(const Tensor<T>&);                                             \
  template Tensor<T> gelu_derivative(const Tensor<T>&);                                  \
  template T gelu_scalar(T);                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                         \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                       \
  template T sum(const Tensor<T>&);                                                      \
  template T mean(const Tensor<T>&);                                                     \
  template Tensor<T> sum_axis(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                           \
  template std::pair<T, T> min_max(const Tensor<T>&);

QACT_INSTANTIATE_OPS(float)
QACT_INSTANTIATE_OPS(double)

#undef QACT_INSTANTIATE_OPS

}  // namespace qact::ops
