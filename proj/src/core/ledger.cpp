// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/ledger.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "qact/error.hpp"

namespace qact {

std::string_view to_string(OpKind op) {
  switch (op) {
    case OpKind::kMatMul:
      return "matmul";
    case OpKind::kSoftmax:
      return "softmax";
    case OpKind::kLayerNorm:
      return "layernorm";
    case OpKind::kGelu:
      return "gelu";
  }
  return "?";
}

std::optional<OpKind> parse_op(std::string_view s) {
  for (OpKind op : kAllOpKinds) {
    if (to_string(op) == s) return op;
  }
  return std::nullopt;
}

StoredBytes StoredBytes::exact(std::size_t elements) {
  StoredBytes b;
  b.elements = elements;
  b.baseline_bytes = elements * kBaselineBytesPerElement;
  b.actual_bytes = b.baseline_bytes;
  return b;
}

StoredBytes StoredBytes::compressed_payload(std::size_t elements, std::size_t quant_param_bytes) {
  StoredBytes b;
  b.elements = elements;
  b.baseline_bytes = elements * kBaselineBytesPerElement;
  b.actual_bytes = elements + quant_param_bytes;
  b.quant_param_bytes = quant_param_bytes;
  b.compressed = true;
  return b;
}

void MemoryLedger::begin_step(std::size_t step) {
  step_ = step;
  records_.clear();
}

void MemoryLedger::record_store(std::string_view layer_id, OpKind op, const StoredBytes& entry) {
  records_.push_back(LedgerRecord{std::string(layer_id), op, entry});
  live_baseline_ += entry.baseline_bytes;
  live_actual_ += entry.actual_bytes;
  peak_baseline_ = std::max(peak_baseline_, live_baseline_);
  peak_actual_ = std::max(peak_actual_, live_actual_);
}

void MemoryLedger::record_release(const StoredBytes& entry) {
  if (entry.baseline_bytes > live_baseline_ || entry.actual_bytes > live_actual_) {
    throw ContractError("memory ledger: releasing more bytes than are live");
  }
  live_baseline_ -= entry.baseline_bytes;
  live_actual_ -= entry.actual_bytes;
}

void MemoryLedger::reset() { *this = MemoryLedger{}; }

void MemoryLedger::restore_peaks(std::size_t baseline, std::size_t actual) {
  peak_baseline_ = std::max(peak_baseline_, baseline);
  peak_actual_ = std::max(peak_actual_, actual);
}

LedgerReport MemoryLedger::report() const {
  LedgerReport r;
  r.step = step_;
  for (std::size_t i = 0; i < kAllOpKinds.size(); ++i) r.per_op[i].op = kAllOpKinds[i];
  for (const LedgerRecord& rec : records_) {
    OpRow& row = r.per_op[static_cast<std::size_t>(rec.op)];
    row.tensors += 1;
    row.baseline_bytes += rec.bytes.baseline_bytes;
    row.actual_bytes += rec.bytes.actual_bytes;
    row.quant_param_bytes += rec.bytes.quant_param_bytes;
  }
  for (const OpRow& row : r.per_op) {
    r.tensors += row.tensors;
    r.baseline_bytes += row.baseline_bytes;
    r.actual_bytes += row.actual_bytes;
    r.quant_param_bytes += row.quant_param_bytes;
  }
  if (r.baseline_bytes > 0 && r.actual_bytes != r.baseline_bytes) {
    r.reduction_ratio = 1.0 - static_cast<double>(r.actual_bytes) / static_cast<double>(r.baseline_bytes);
  }
  r.peak_baseline_bytes = peak_baseline_;
  r.peak_actual_bytes = peak_actual_;
  return r;
}

nlohmann::json LedgerReport::to_json() const {
  nlohmann::json ops = nlohmann::json::array();
  for (const OpRow& row : per_op) {
    ops.push_back({{"op", to_string(row.op)},
                   {"tensors", row.tensors},
                   {"baseline_bytes", row.baseline_bytes},
                   {"actual_bytes", row.actual_bytes},
                   {"quant_param_bytes", row.quant_param_bytes}});
  }
  return {{"step", step},
          {"tensors", tensors},
          {"baseline_bytes", baseline_bytes},
          {"actual_bytes", actual_bytes},
          {"quant_param_bytes", quant_param_bytes},
          {"reduction_ratio", reduction_ratio},
          {"peak_baseline_bytes", peak_baseline_bytes},
          {"peak_actual_bytes", peak_actual_bytes},
          {"per_op", ops}};
}

std::string LedgerReport::to_table() const {
  std::ostringstream os;
  const auto line = [&](std::string_view name, std::size_t n, std::size_t base, std::size_t actual,
                        std::size_t params) {
    const double saved = base == 0 ? 0.0 : 100.0 * (1.0 - static_cast<double>(actual) / static_cast<double>(base));
    os << std::left << std::setw(10) << name << std::right << std::setw(8) << n << std::setw(14) << base
       << std::setw(14) << actual << std::setw(12) << params << std::setw(9) << std::fixed << std::setprecision(1)
       << saved << "%\n";
  };
  os << std::left << std::setw(10) << "op" << std::right << std::setw(8) << "tensors" << std::setw(14)
     << "baseline_B" << std::setw(14) << "actual_B" << std::setw(12) << "qparam_B" << std::setw(10) << "saved"
     << '\n';
  for (const OpRow& row : per_op) {
    line(to_string(row.op), row.tensors, row.baseline_bytes, row.actual_bytes, row.quant_param_bytes);
  }
  line("total", tensors, baseline_bytes, actual_bytes, quant_param_bytes);
  os << "peak live bytes: baseline " << peak_baseline_bytes << ", actual " << peak_actual_bytes << '\n';
  return os.str();
}

}  // namespace qact
