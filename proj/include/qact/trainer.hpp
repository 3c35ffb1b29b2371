// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qact/layers.hpp"
#include "qact/ledger.hpp"
#include "qact/model.hpp"
#include "qact/optim.hpp"
#include "qact/tasks.hpp"

namespace qact {

struct TrainConfig {
  std::uint64_t steps = 2000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 5e-2;
  std::uint64_t seed = 0;
  // The running-estimate decay lives in policy.lambda.
  CompressionPolicy policy;
  Precision precision = Precision::kStandard;
  TaskKind task = TaskKind::kMarkerDetection;
  std::size_t log_every = 10;
  std::size_t trajectory_stride = 10;
  std::size_t eval_samples = kEvalSamples;

  // Throws UsageError on out-of-range values.
  void validate() const;
};

struct StepMetrics {
  std::uint64_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  LedgerReport ledger;
};

struct TrajectoryPoint {
  std::uint64_t step = 0;
  std::string layer;
  std::size_t group = 0;
  float alpha = 0.0f;
  float beta = 0.0f;
};

enum class RunStatus { kOk, kDiverged };
std::string_view to_string(RunStatus s);

struct TrainReport {
  RunStatus status = RunStatus::kOk;
  std::string failure;
  std::uint64_t steps_completed = 0;
  std::size_t parameter_count = 0;
  std::vector<StepMetrics> metrics;
  std::vector<TrajectoryPoint> trajectories;
  double final_loss = 0.0;
  double eval_accuracy = 0.0;
  // Ledger of the last completed step, with run-wide peaks.
  LedgerReport ledger;
  double base_lr = 0.0;
  double weight_decay = 0.0;
};

// One training run. Step t uses training batch t of the task, so stopping,
// checkpointing and resuming reproduces an uninterrupted run bit for bit.
template <Real T>
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // Runs one optimization step. Throws NumericalError on a non-finite loss or
  // activation.
  void step();
  bool done() const { return step_ >= train_.steps; }
  // Steps until done, divergence, or step `stop_at` is reached. Evaluates on
  // the held-out set only once all configured steps have run.
  TrainReport run(std::optional<std::uint64_t> stop_at = std::nullopt);

  double evaluate() const;
  TrainReport& report() { return report_; }

  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }
  const ModelParams<T>& params() const { return params_; }
  const AdamWState<T>& optimizer() const { return opt_; }
  const ActivationStore& store() const { return store_; }
  const MemoryLedger& ledger() const { return ledger_; }
  std::uint64_t current_step() const { return step_; }

  // Self-describing JSON checkpoint and its inverse. restore() requires the
  // same model and training configuration.
  nlohmann::json checkpoint() const;
  void restore(const nlohmann::json& ckpt);
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

 private:
  void log_trajectories();

  ModelConfig model_;
  TrainConfig train_;
  SyntheticTask task_;
  ModelParams<T> params_;
  AdamWState<T> opt_;
  MemoryLedger ledger_;
  ActivationStore store_;
  std::uint64_t step_ = 0;
  TrainReport report_;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

// Builds a trainer at the configured precision and runs it.
TrainReport train(const ModelConfig& model, const TrainConfig& cfg);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CompressionPolicy& p);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const TrainReport& r);

}  // namespace qact
