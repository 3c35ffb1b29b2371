// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace qact {

// Operation families that save activations for backward.
enum class OpKind { kMatMul, kSoftmax, kLayerNorm, kGelu };
inline constexpr std::array<OpKind, 4> kAllOpKinds = {OpKind::kMatMul, OpKind::kSoftmax, OpKind::kLayerNorm,
                                                      OpKind::kGelu};

std::string_view to_string(OpKind op);
std::optional<OpKind> parse_op(std::string_view s);

inline constexpr std::size_t kBaselineBytesPerElement = 4;

// Size of one stored-for-backward tensor as seen by the ledger.
struct StoredBytes {
  std::size_t elements = 0;
  std::size_t baseline_bytes = 0;  // elements * 4
  std::size_t actual_bytes = 0;    // elements * 4, or elements * 1 + quant_param_bytes
  std::size_t quant_param_bytes = 0;
  bool compressed = false;

  static StoredBytes exact(std::size_t elements);
  static StoredBytes compressed_payload(std::size_t elements, std::size_t quant_param_bytes);
};

struct LedgerRecord {
  std::string layer_id;
  OpKind op = OpKind::kMatMul;
  StoredBytes bytes;
};

struct OpRow {
  OpKind op = OpKind::kMatMul;
  std::size_t tensors = 0;
  std::size_t baseline_bytes = 0;
  std::size_t actual_bytes = 0;
  std::size_t quant_param_bytes = 0;
};

struct LedgerReport {
  std::size_t step = 0;
  std::size_t tensors = 0;
  std::size_t baseline_bytes = 0;
  std::size_t actual_bytes = 0;
  std::size_t quant_param_bytes = 0;
  // 1 - actual / baseline; exactly 0 when nothing is compressed.
  double reduction_ratio = 0.0;
  std::array<OpRow, 4> per_op{};
  std::size_t peak_baseline_bytes = 0;
  std::size_t peak_actual_bytes = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

// Byte accounting of stored activations under two arms: a float32 baseline
// that saves every tensor exactly, and what was actually saved. Records cover
// the current step; peaks track live bytes (stored, not yet consumed by
// backward) across the whole run.
class MemoryLedger {
 public:
  void begin_step(std::size_t step);
  void record_store(std::string_view layer_id, OpKind op, const StoredBytes& entry);
  void record_release(const StoredBytes& entry);
  void reset();
  // Resuming a run carries the peaks of the interrupted one forward.
  void restore_peaks(std::size_t baseline, std::size_t actual);

  LedgerReport report() const;
  const std::vector<LedgerRecord>& records() const { return records_; }
  std::size_t step() const { return step_; }
  std::size_t live_baseline_bytes() const { return live_baseline_; }
  std::size_t live_actual_bytes() const { return live_actual_; }
  std::size_t peak_baseline_bytes() const { return peak_baseline_; }
  std::size_t peak_actual_bytes() const { return peak_actual_; }

 private:
  std::size_t step_ = 0;
  std::vector<LedgerRecord> records_;
  std::size_t live_baseline_ = 0;
  std::size_t live_actual_ = 0;
  std::size_t peak_baseline_ = 0;
  std::size_t peak_actual_ = 0;
};

}  // namespace qact
