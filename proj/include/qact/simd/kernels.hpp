// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace qact::simd {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);
std::optional<Isa> parse_isa(std::string_view name);

// Inner loops of the 8-bit codec and of float GEMM. Every variant must be
// bit-identical to the scalar table: no FMA contraction, identical reduction
// order, and the codec arithmetic carried out in double.
//
// Codec convention, shared by the asymmetric and symmetric schemes:
//   encode: code = clip(round((x - offset) * scale) + code_bias, 0, 255)
//   decode: x    = (code - code_bias) * step + offset
// Asymmetric: offset = beta, scale = 255/alpha, step = alpha/255, code_bias = 0.
// Symmetric:  offset = 0, scale = 127/max|x|, step = max|x|/127, code_bias = 128.
struct KernelTable {
  Isa isa;

  void (*min_max)(const float* x, std::size_t n, float* min_out, float* max_out);
  float (*abs_max)(const float* x, std::size_t n);

  // Round half to even.
  void (*encode_nearest)(const float* x, std::size_t n, double offset, double scale,
                         double code_bias, std::uint8_t* out);
  // Rounds up iff noise[i] < frac(v); noise values are uniform in [0, 1).
  void (*encode_stochastic)(const float* x, std::size_t n, double offset, double scale,
                            double code_bias, const double* noise, std::uint8_t* out);
  void (*decode)(const std::uint8_t* codes, std::size_t n, double step, double offset,
                 double code_bias, float* out);

  // c[m x n] = a[m x k] * b[k x n], row-major, c overwritten. Each output is
  // accumulated over k in ascending order starting from zero.
  void (*gemm)(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n);
};

const KernelTable& scalar_kernels();
// nullptr when the variant was not compiled in or the CPU lacks support.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Every table usable on this machine, scalar first.
std::vector<const KernelTable*> available_kernels();

// Best available table, unless overridden by QACT_ISA=<scalar|avx2|neon> or
// force_isa().
const KernelTable& active_kernels();

// Returns false when the requested variant is unavailable.
bool force_isa(Isa isa);
void reset_isa();

}  // namespace qact::simd
