// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 only. Callers reach these through the dispatch table
// after a CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "kernels_internal.hpp"

namespace qact::simd::avx2 {
namespace {

inline float hmin(__m256 v) {
  __m128 m = _mm_min_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
  m = _mm_min_ps(m, _mm_movehl_ps(m, m));
  m = _mm_min_ss(m, _mm_shuffle_ps(m, m, 1));
  return _mm_cvtss_f32(m);
}

inline float hmax(__m256 v) {
  __m128 m = _mm_max_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
  m = _mm_max_ps(m, _mm_movehl_ps(m, m));
  m = _mm_max_ss(m, _mm_shuffle_ps(m, m, 1));
  return _mm_cvtss_f32(m);
}

// Eight clipped, integral doubles (two halves) to eight bytes.
inline void store_codes(__m256d lo, __m256d hi, std::uint8_t* out) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d top = _mm256_set1_pd(255.0);
  lo = _mm256_min_pd(_mm256_max_pd(lo, zero), top);
  hi = _mm256_min_pd(_mm256_max_pd(hi, zero), top);
  const __m128i a = _mm256_cvttpd_epi32(lo);
  const __m128i b = _mm256_cvttpd_epi32(hi);
  const __m128i w = _mm_packus_epi32(a, b);
  const __m128i bytes = _mm_packus_epi16(w, w);
  _mm_storel_epi64(reinterpret_cast<__m128i*>(out), bytes);
}

}  // namespace

void min_max(const float* x, std::size_t n, float* min_out, float* max_out) {
  std::size_t i = 0;
  float lo = x[0];
  float hi = x[0];
  if (n >= 8) {
    __m256 vlo = _mm256_loadu_ps(x);
    __m256 vhi = vlo;
    for (i = 8; i + 8 <= n; i += 8) {
      const __m256 v = _mm256_loadu_ps(x + i);
      vlo = _mm256_min_ps(vlo, v);
      vhi = _mm256_max_ps(vhi, v);
    }
    lo = hmin(vlo);
    hi = hmax(vhi);
  }
  for (; i < n; ++i) {
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
  }
  *min_out = lo;
  *max_out = hi;
}

float abs_max(const float* x, std::size_t n) {
  const __m256 sign = _mm256_set1_ps(-0.0f);
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_andnot_ps(sign, _mm256_loadu_ps(x + i)));
  float m = hmax(acc);
  for (; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

void encode_nearest(const float* x, std::size_t n, double offset, double scale, double code_bias,
                    std::uint8_t* out) {
  const __m256d voff = _mm256_set1_pd(offset);
  const __m256d vscale = _mm256_set1_pd(scale);
  const __m256d vbias = _mm256_set1_pd(code_bias);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d x0 = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
    const __m256d x1 = _mm256_cvtps_pd(_mm_loadu_ps(x + i + 4));
    __m256d v0 = _mm256_mul_pd(_mm256_sub_pd(x0, voff), vscale);
    __m256d v1 = _mm256_mul_pd(_mm256_sub_pd(x1, voff), vscale);
    v0 = _mm256_add_pd(_mm256_round_pd(v0, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC), vbias);
    v1 = _mm256_add_pd(_mm256_round_pd(v1, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC), vbias);
    store_codes(v0, v1, out + i);
  }
  for (; i < n; ++i) {
    const double v = (static_cast<double>(x[i]) - offset) * scale;
    out[i] = clip_code(std::nearbyint(v) + code_bias);
  }
}

void encode_stochastic(const float* x, std::size_t n, double offset, double scale,
                       double code_bias, const double* noise, std::uint8_t* out) {
  const __m256d voff = _mm256_set1_pd(offset);
  const __m256d vscale = _mm256_set1_pd(scale);
  const __m256d vbias = _mm256_set1_pd(code_bias);
  const __m256d one = _mm256_set1_pd(1.0);
  auto round_half = [&](__m256d xv, const double* nz) {
    const __m256d v = _mm256_mul_pd(_mm256_sub_pd(xv, voff), vscale);
    const __m256d lo = _mm256_floor_pd(v);
    const __m256d frac = _mm256_sub_pd(v, lo);
    const __m256d up = _mm256_and_pd(_mm256_cmp_pd(_mm256_loadu_pd(nz), frac, _CMP_LT_OQ), one);
    return _mm256_add_pd(_mm256_add_pd(lo, up), vbias);
  };
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d r0 = round_half(_mm256_cvtps_pd(_mm_loadu_ps(x + i)), noise + i);
    const __m256d r1 = round_half(_mm256_cvtps_pd(_mm_loadu_ps(x + i + 4)), noise + i + 4);
    store_codes(r0, r1, out + i);
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
  const __m256d vstep = _mm256_set1_pd(step);
  const __m256d voff = _mm256_set1_pd(offset);
  const __m256d vbias = _mm256_set1_pd(code_bias);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256i q = _mm256_cvtepu8_epi32(_mm_loadl_epi64(reinterpret_cast<const __m128i*>(codes + i)));
    const __m256d q0 = _mm256_cvtepi32_pd(_mm256_castsi256_si128(q));
    const __m256d q1 = _mm256_cvtepi32_pd(_mm256_extracti128_si256(q, 1));
    const __m256d y0 = _mm256_add_pd(_mm256_mul_pd(_mm256_sub_pd(q0, vbias), vstep), voff);
    const __m256d y1 = _mm256_add_pd(_mm256_mul_pd(_mm256_sub_pd(q1, vbias), vstep), voff);
    _mm_storeu_ps(out + i, _mm256_cvtpd_ps(y0));
    _mm_storeu_ps(out + i + 4, _mm256_cvtpd_ps(y1));
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
    for (; j + 32 <= n; j += 32) {
      __m256 acc0 = _mm256_setzero_ps();
      __m256 acc1 = _mm256_setzero_ps();
      __m256 acc2 = _mm256_setzero_ps();
      __m256 acc3 = _mm256_setzero_ps();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256 av = _mm256_set1_ps(arow[p]);
        const float* brow = b + p * n + j;
        acc0 = _mm256_add_ps(acc0, _mm256_mul_ps(av, _mm256_loadu_ps(brow)));
        acc1 = _mm256_add_ps(acc1, _mm256_mul_ps(av, _mm256_loadu_ps(brow + 8)));
        acc2 = _mm256_add_ps(acc2, _mm256_mul_ps(av, _mm256_loadu_ps(brow + 16)));
        acc3 = _mm256_add_ps(acc3, _mm256_mul_ps(av, _mm256_loadu_ps(brow + 24)));
      }
      _mm256_storeu_ps(crow + j, acc0);
      _mm256_storeu_ps(crow + j + 8, acc1);
      _mm256_storeu_ps(crow + j + 16, acc2);
      _mm256_storeu_ps(crow + j + 24, acc3);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 acc = _mm256_setzero_ps();
      for (std::size_t p = 0; p < k; ++p) {
        acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_set1_ps(arow[p]), _mm256_loadu_ps(b + p * n + j)));
      }
      _mm256_storeu_ps(crow + j, acc);
    }
    for (; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc = acc + arow[p] * b[p * n + j];
      crow[j] = acc;
    }
  }
}

}  // namespace qact::simd::avx2

namespace qact::simd {

const KernelTable& avx2_table() {
  static const KernelTable table{
      Isa::kAvx2,           avx2::min_max, avx2::abs_max, avx2::encode_nearest,
      avx2::encode_stochastic, avx2::decode, avx2::gemm,
  };
  return table;
}

}  // namespace qact::simd
