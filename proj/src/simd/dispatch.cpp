// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>

#include "kernels_internal.hpp"

namespace qact::simd {
namespace {

std::atomic<const KernelTable*> g_forced{nullptr};

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return &scalar_kernels();
    case Isa::kAvx2:
      return avx2_kernels();
    case Isa::kNeon:
      return neon_kernels();
  }
  return nullptr;
}

const KernelTable& detect() {
  if (const char* env = std::getenv("QACT_ISA")) {
    if (auto isa = parse_isa(env)) {
      if (const KernelTable* t = table_for(*isa)) return *t;
    }
  }
  if (const KernelTable* t = avx2_kernels()) return *t;
  if (const KernelTable* t = neon_kernels()) return *t;
  return scalar_kernels();
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

std::optional<Isa> parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::kScalar;
  if (name == "avx2") return Isa::kAvx2;
  if (name == "neon") return Isa::kNeon;
  return std::nullopt;
}

const KernelTable* avx2_kernels() {
#if defined(QACT_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(QACT_HAVE_NEON)
  return &neon_table();
#else
  return nullptr;
#endif
}

std::vector<const KernelTable*> available_kernels() {
  std::vector<const KernelTable*> out{&scalar_kernels()};
  if (const KernelTable* t = avx2_kernels()) out.push_back(t);
  if (const KernelTable* t = neon_kernels()) out.push_back(t);
  return out;
}

const KernelTable& active_kernels() {
  if (const KernelTable* forced = g_forced.load(std::memory_order_acquire)) return *forced;
  static const KernelTable& detected = detect();
  return detected;
}

bool force_isa(Isa isa) {
  const KernelTable* t = table_for(isa);
  if (t == nullptr) return false;
  g_forced.store(t, std::memory_order_release);
  return true;
}

void reset_isa() { g_forced.store(nullptr, std::memory_order_release); }

}  // namespace qact::simd
