// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kernels_internal.hpp"

namespace qact::simd::scalar {

void min_max(const float* x, std::size_t n, float* min_out, float* max_out) {
  float lo = x[0];
  float hi = x[0];
  for (std::size_t i = 1; i < n; ++i) {
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
  }
  *min_out = lo;
  *max_out = hi;
}

float abs_max(const float* x, std::size_t n) {
  float m = 0.0f;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

void encode_nearest(const float* x, std::size_t n, double offset, double scale, double code_bias,
                    std::uint8_t* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (static_cast<double>(x[i]) - offset) * scale;
    out[i] = clip_code(std::nearbyint(v) + code_bias);
  }
}

void encode_stochastic(const float* x, std::size_t n, double offset, double scale,
                       double code_bias, const double* noise, std::uint8_t* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (static_cast<double>(x[i]) - offset) * scale;
    const double lo = std::floor(v);
    const double up = noise[i] < (v - lo) ? 1.0 : 0.0;
    out[i] = clip_code(lo + up + code_bias);
  }
}

void decode(const std::uint8_t* codes, std::size_t n, double step, double offset, double code_bias,
            float* out) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>((static_cast<double>(codes[i]) - code_bias) * step + offset);
  }
}

void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  std::memset(c, 0, sizeof(float) * m * n);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = a[i * k + p];
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + aip * brow[j];
    }
  }
}

}  // namespace qact::simd::scalar

namespace qact::simd {

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      Isa::kScalar,           scalar::min_max, scalar::abs_max, scalar::encode_nearest,
      scalar::encode_stochastic, scalar::decode, scalar::gemm,
  };
  return table;
}

}  // namespace qact::simd
