// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "qact/error.hpp"
#include "qact/ledger.hpp"
#include "qact/model.hpp"
#include "qact/tasks.hpp"

using namespace qact;

TEST_SUITE("memory-ledger") {
  TEST_CASE("one compressed tensor of 1024 elements with four groups") {
    MemoryLedger ledger;
    ledger.begin_step(0);
    ledger.record_store("x", OpKind::kMatMul, StoredBytes::compressed_payload(1024, 2 * 4 * 4));
    const LedgerReport r = ledger.report();
    CHECK(r.baseline_bytes == 4096);
    CHECK(r.actual_bytes == 1024 + 32);
    CHECK(r.quant_param_bytes == 32);
    CHECK(r.reduction_ratio == doctest::Approx(1.0 - 1056.0 / 4096.0));
    CHECK(r.reduction_ratio == doctest::Approx(0.742).epsilon(1e-3));
  }

  TEST_CASE("nothing compressed gives a ratio of exactly zero") {
    MemoryLedger ledger;
    ledger.record_store("a", OpKind::kGelu, StoredBytes::exact(100));
    ledger.record_store("b", OpKind::kSoftmax, StoredBytes::exact(7));
    const LedgerReport r = ledger.report();
    CHECK(r.reduction_ratio == 0.0);
    CHECK(r.baseline_bytes == r.actual_bytes);
    CHECK(r.baseline_bytes == 428);
  }

  TEST_CASE("per-op rows sum to totals") {
    MemoryLedger ledger;
    ledger.record_store("a", OpKind::kMatMul, StoredBytes::compressed_payload(64, 32));
    ledger.record_store("b", OpKind::kLayerNorm, StoredBytes::exact(9));
    ledger.record_store("c", OpKind::kLayerNorm, StoredBytes::compressed_payload(33, 8));
    ledger.record_store("d", OpKind::kGelu, StoredBytes::compressed_payload(128, 32));
    const LedgerReport r = ledger.report();
    std::size_t tensors = 0, base = 0, act = 0, qp = 0;
    for (const OpRow& row : r.per_op) {
      tensors += row.tensors;
      base += row.baseline_bytes;
      act += row.actual_bytes;
      qp += row.quant_param_bytes;
    }
    CHECK(tensors == r.tensors);
    CHECK(base == r.baseline_bytes);
    CHECK(act == r.actual_bytes);
    CHECK(qp == r.quant_param_bytes);
    CHECK(r.per_op[static_cast<std::size_t>(OpKind::kLayerNorm)].actual_bytes == 36 + 33 + 8);
    CHECK(r.per_op[static_cast<std::size_t>(OpKind::kSoftmax)].tensors == 0);
  }

  TEST_CASE("peak tracks live bytes across stores and releases") {
    MemoryLedger ledger;
    const StoredBytes a = StoredBytes::exact(10);
    const StoredBytes b = StoredBytes::compressed_payload(20, 8);
    ledger.record_store("a", OpKind::kMatMul, a);
    ledger.record_store("b", OpKind::kMatMul, b);
    CHECK(ledger.live_baseline_bytes() == 120);
    CHECK(ledger.live_actual_bytes() == 40 + 28);
    ledger.record_release(b);
    ledger.record_release(a);
    CHECK(ledger.live_baseline_bytes() == 0);
    ledger.record_store("c", OpKind::kGelu, StoredBytes::exact(5));
    const LedgerReport r = ledger.report();
    CHECK(r.peak_baseline_bytes == 120);
    CHECK(r.peak_actual_bytes == 68);
    CHECK_THROWS_AS(ledger.record_release(StoredBytes::exact(1000)), ContractError);
  }

  TEST_CASE("reset zeroes every counter") {
    MemoryLedger ledger;
    ledger.begin_step(3);
    ledger.record_store("a", OpKind::kMatMul, StoredBytes::exact(10));
    ledger.reset();
    const LedgerReport r = ledger.report();
    CHECK(r.step == 0);
    CHECK(r.tensors == 0);
    CHECK(r.baseline_bytes == 0);
    CHECK(r.peak_baseline_bytes == 0);
    CHECK(ledger.live_actual_bytes() == 0);
  }

  TEST_CASE("json and table output") {
    MemoryLedger ledger;
    ledger.record_store("a", OpKind::kSoftmax, StoredBytes::compressed_payload(1024, 32));
    const LedgerReport r = ledger.report();
    const nlohmann::json j = r.to_json();
    CHECK(j.at("baseline_bytes") == 4096);
    CHECK(j.at("actual_bytes") == 1056);
    const std::string table = r.to_table();
    CHECK(table.find("softmax") != std::string::npos);
    CHECK(table.find("total") != std::string::npos);
  }

  TEST_CASE("baseline arm is independent of policy and each flag lowers actual bytes") {
    const ModelConfig cfg;
    const ModelParams<float> params = init_model(cfg, 1);
    const SyntheticTask task(TaskKind::kMarkerDetection, cfg.seq_len, cfg.vocab, 1);
    const Batch batch = task.train_batch(0, 8);
    auto measure = [&](const CompressionPolicy& policy) {
      MemoryLedger ledger;
      ActivationStore store(policy, 1, cfg.heads, &ledger);
      ModelContext<float> ctx;
      model_forward(params, cfg, batch, &store, &ctx);
      return ledger.report();
    };
    const LedgerReport none = measure(CompressionPolicy::none());
    std::size_t saved = 0;
    for (OpKind op : kAllOpKinds) {
      CompressionPolicy p;
      p.set_op(op, true);
      const LedgerReport r = measure(p);
      CHECK(r.baseline_bytes == none.baseline_bytes);
      CHECK(r.actual_bytes < none.actual_bytes);
      saved += none.actual_bytes - r.actual_bytes;
    }
    const LedgerReport all = measure(CompressionPolicy::all_ops());
    CHECK(all.baseline_bytes == none.baseline_bytes);
    CHECK(none.actual_bytes - all.actual_bytes == saved);
  }
}
