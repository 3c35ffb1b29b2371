// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/tasks.hpp"

#include <stdexcept>
#include <utility>

namespace qact {

std::string_view to_string(TaskKind k) {
  return k == TaskKind::kMarkerDetection ? "marker" : "majority";
}

std::optional<TaskKind> parse_task(std::string_view name) {
  if (name == "marker" || name == "marker-detection") return TaskKind::kMarkerDetection;
  if (name == "majority" || name == "majority-token") return TaskKind::kMajorityToken;
  return std::nullopt;
}

SyntheticTask::SyntheticTask(TaskKind kind, std::size_t seq_len, std::size_t vocab, std::uint64_t seed)
    : kind_(kind), seq_len_(seq_len), vocab_(vocab), seed_(seed) {
  if (seq_len == 0) throw std::invalid_argument("task: sequence length must be positive");
  if (kind == TaskKind::kMarkerDetection && vocab < 2) {
    throw std::invalid_argument("marker task needs a vocabulary of at least 2 tokens");
  }
  if (kind == TaskKind::kMajorityToken && vocab < 3) {
    throw std::invalid_argument("majority task needs a vocabulary of at least 3 tokens");
  }
}

void SyntheticTask::sample_one(Rng& rng, std::span<std::int32_t> tokens, std::int32_t& label) const {
  label = rng.bernoulli(0.5) ? 1 : 0;
  const std::size_t n = seq_len_;
  if (kind_ == TaskKind::kMarkerDetection) {
    for (auto& t : tokens) t = static_cast<std::int32_t>(1 + rng.below(vocab_ - 1));
    if (label == 1) tokens[rng.below(n)] = 0;
    return;
  }
  // Majority: k >= floor(n/2) + 1 copies of the winning token, rest the loser.
  const std::int32_t winner = label == 1 ? 2 : 1;
  const std::int32_t loser = label == 1 ? 1 : 2;
  const std::size_t k = n / 2 + 1 + rng.below(n - n / 2);
  for (std::size_t i = 0; i < n; ++i) tokens[i] = i < k ? winner : loser;
  for (std::size_t i = n; i-- > 1;) std::swap(tokens[i], tokens[rng.below(i + 1)]);
}

Batch SyntheticTask::sample(std::size_t batch_size, Rng& rng) const {
  Batch b;
  b.size = batch_size;
  b.seq_len = seq_len_;
  b.tokens.resize(batch_size * seq_len_);
  b.labels.resize(batch_size);
  for (std::size_t s = 0; s < batch_size; ++s) {
    sample_one(rng, std::span<std::int32_t>(b.tokens).subspan(s * seq_len_, seq_len_), b.labels[s]);
  }
  return b;
}

Batch SyntheticTask::train_batch(std::uint64_t step, std::size_t batch_size) const {
  Rng rng = Rng::for_stream(seed_, "task.train", step);
  return sample(batch_size, rng);
}

Batch SyntheticTask::eval_set(std::size_t samples) const {
  Rng rng = Rng::for_stream(seed_, "task.eval");
  return sample(samples, rng);
}

TensorF generate_heterogeneous_heads(std::size_t batch, std::size_t heads, std::size_t seq_len, std::size_t head_dim,
                                     std::span<const double> means, std::span<const double> scales,
                                     std::uint64_t seed) {
  if (means.size() != heads || scales.size() != heads) {
    throw std::invalid_argument("heterogeneous heads: need one mean and one scale per head");
  }
  Rng rng = Rng::for_stream(seed, "heterogeneous-heads");
  TensorF t({batch, heads, seq_len, head_dim});
  const std::size_t inner = seq_len * head_dim;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      float* dst = t.data().data() + (b * heads + h) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        dst[i] = scales[h] == 0.0 ? static_cast<float>(means[h])
                                  : static_cast<float>(rng.normal(means[h], scales[h]));
      }
    }
  }
  return t;
}

}  // namespace qact
