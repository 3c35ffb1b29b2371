// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "qact/model.hpp"
#include "qact/rng.hpp"

namespace qact {

enum class TaskKind {
  kMarkerDetection,  // label 1 iff token 0 occurs in the sequence
  kMajorityToken,    // label 1 iff token 2 outnumbers token 1
};

std::string_view to_string(TaskKind k);
std::optional<TaskKind> parse_task(std::string_view name);

inline constexpr std::size_t kEvalSamples = 4096;

// Binary classification over token sequences. Training batch i and the
// held-out set are pure functions of (seed, i), so resumed runs see the same
// data.
class SyntheticTask {
 public:
  SyntheticTask(TaskKind kind, std::size_t seq_len, std::size_t vocab, std::uint64_t seed);

  TaskKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }

  Batch sample(std::size_t batch_size, Rng& rng) const;
  Batch train_batch(std::uint64_t step, std::size_t batch_size) const;
  Batch eval_set(std::size_t samples = kEvalSamples) const;

 private:
  void sample_one(Rng& rng, std::span<std::int32_t> tokens, std::int32_t& label) const;

  TaskKind kind_;
  std::size_t seq_len_;
  std::size_t vocab_;
  std::uint64_t seed_;
};

// (B, H, N, Dh) tensor whose head h is drawn from Normal(means[h], scales[h]^2).
TensorF generate_heterogeneous_heads(std::size_t batch, std::size_t heads, std::size_t seq_len, std::size_t head_dim,
                                     std::span<const double> means, std::span<const double> scales,
                                     std::uint64_t seed);

}  // namespace qact
