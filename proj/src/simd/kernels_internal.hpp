// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "qact/simd/kernels.hpp"

namespace qact::simd {

// Clip an already-rounded code value to [0, 255].
inline std::uint8_t clip_code(double v) {
  if (v < 0.0) return 0;
  if (v > 255.0) return 255;
  return static_cast<std::uint8_t>(v);
}

#if defined(QACT_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(QACT_HAVE_NEON)
const KernelTable& neon_table();
#endif

}  // namespace qact::simd
