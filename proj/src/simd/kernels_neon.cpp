// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

// AArch64 only. Built when the target is aarch64; not exercised on x86 hosts.

#include <arm_neon.h>

#include <algorithm>
#include <cmath>

#include "kernels_internal.hpp"

namespace qact::simd::neon {
namespace {

inline float64x2_t clip(float64x2_t v) {
  return vminq_f64(vmaxq_f64(v, vdupq_n_f64(0.0)), vdupq_n_f64(255.0));
}

inline void store2(float64x2_t v, std::uint8_t* out) {
  const uint64x2_t u = vcvtq_u64_f64(clip(v));
  out[0] = static_cast<std::uint8_t>(vgetq_lane_u64(u, 0));
  out[1] = static_cast<std::uint8_t>(vgetq_lane_u64(u, 1));
}

}  // namespace

void min_max(const float* x, std::size_t n, float* min_out, float* max_out) {
  std::size_t i = 0;
  float lo = x[0];
  float hi = x[0];
  if (n >= 4) {
    float32x4_t vlo = vld1q_f32(x);
    float32x4_t vhi = vlo;
    for (i = 4; i + 4 <= n; i += 4) {
      const float32x4_t v = vld1q_f32(x + i);
      vlo = vminq_f32(vlo, v);
      vhi = vmaxq_f32(vhi, v);
    }
    lo = vminvq_f32(vlo);
    hi = vmaxvq_f32(vhi);
  }
  for (; i < n; ++i) {
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
  }
  *min_out = lo;
  *max_out = hi;
}

float abs_max(const float* x, std::size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vmaxq_f32(acc, vabsq_f32(vld1q_f32(x + i)));
  float m = vmaxvq_f32(acc);
  for (; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

void encode_nearest(const float* x, std::size_t n, double offset, double scale, double code_bias,
                    std::uint8_t* out) {
  const float64x2_t voff = vdupq_n_f64(offset);
  const float64x2_t vscale = vdupq_n_f64(scale);
  const float64x2_t vbias = vdupq_n_f64(code_bias);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t xv = vcvt_f64_f32(vld1_f32(x + i));
    const float64x2_t v = vmulq_f64(vsubq_f64(xv, voff), vscale);
    store2(vaddq_f64(vrndnq_f64(v), vbias), out + i);
  }
  for (; i < n; ++i) {
    const double v = (static_cast<double>(x[i]) - offset) * scale;
    out[i] = clip_code(std::nearbyint(v) + code_bias);
  }
}

void encode_stochastic(const float* x, std::size_t n, double offset, double scale,
                       double code_bias, const double* noise, std::uint8_t* out) {
  const float64x2_t voff = vdupq_n_f64(offset);
  const float64x2_t vscale = vdupq_n_f64(scale);
  const float64x2_t vbias = vdupq_n_f64(code_bias);
  const float64x2_t one = vdupq_n_f64(1.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t xv = vcvt_f64_f32(vld1_f32(x + i));
    const float64x2_t v = vmulq_f64(vsubq_f64(xv, voff), vscale);
    const float64x2_t lo = vrndmq_f64(v);
    const float64x2_t frac = vsubq_f64(v, lo);
    const uint64x2_t mask = vcltq_f64(vld1q_f64(noise + i), frac);
    const float64x2_t up = vreinterpretq_f64_u64(vandq_u64(mask, vreinterpretq_u64_f64(one)));
    store2(vaddq_f64(vaddq_f64(lo, up), vbias), out + i);
  }
  for (; i < n; ++i) {
    const double v = (static_cast<double>(x[i]) - offset) * scale;
    const double lo = std::floor(v);
    const double up = noise[i] < (v - lo) ? 1.0 : 0.0;
    out[i] = clip_code(lo + up + code_bias);
  }
}

void decode(const std::uint8_t* codes, std::size_t n, double step, double offset, double code_bias,
            float* out) {
  const float64x2_t vstep = vdupq_n_f64(step);
  const float64x2_t voff = vdupq_n_f64(offset);
  const float64x2_t vbias = vdupq_n_f64(code_bias);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const double q[2] = {static_cast<double>(codes[i]), static_cast<double>(codes[i + 1])};
    const float64x2_t y = vaddq_f64(vmulq_f64(vsubq_f64(vld1q_f64(q), vbias), vstep), voff);
    vst1_f32(out + i, vcvt_f32_f64(y));
  }
  for (; i < n; ++i) {
    out[i] = static_cast<float>((static_cast<double>(codes[i]) - code_bias) * step + offset);
  }
}

void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float32x4_t acc = vdupq_n_f32(0.0f);
      for (std::size_t p = 0; p < k; ++p) {
        acc = vaddq_f32(acc, vmulq_f32(vdupq_n_f32(arow[p]), vld1q_f32(b + p * n + j)));
      }
      vst1q_f32(crow + j, acc);
    }
    for (; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc = acc + arow[p] * b[p * n + j];
      crow[j] = acc;
    }
  }
}

}  // namespace qact::simd::neon

namespace qact::simd {

const KernelTable& neon_table() {
  static const KernelTable table{
      Isa::kNeon,           neon::min_max, neon::abs_max, neon::encode_nearest,
      neon::encode_stochastic, neon::decode, neon::gemm,
  };
  return table;
}

}  // namespace qact::simd
