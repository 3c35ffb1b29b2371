// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "qact/rng.hpp"
#include "qact/tensor.hpp"

namespace qact {

enum class GroupingKind { kHeadWise, kChannelGroup, kLayerWise };
enum class QuantScheme { kAsymmetric, kSymmetric };
enum class Rounding { kStochastic, kNearest };
enum class StatsMode { kRunningEstimate, kPerSample };

std::string_view to_string(GroupingKind k);
std::string_view to_string(QuantScheme s);
std::string_view to_string(Rounding r);
std::string_view to_string(StatsMode m);
std::optional<QuantScheme> parse_scheme(std::string_view s);
std::optional<Rounding> parse_rounding(std::string_view s);
std::optional<StatsMode> parse_stats(std::string_view s);

// Lower bound on the clipping range; a constant group would otherwise give a
// zero divisor in the encode scale.
inline constexpr float kAlphaFloor = 1e-8f;
inline constexpr float kDefaultLambda = 0.9f;
inline constexpr int kCodeMax = 255;

// Partition of a tensor's elements into quantization groups. Dimension 0 is
// always the sample (batch) axis.
//   head-wise:     (B, H, ...)  -> group = head index, G = H
//   channel-group: (..., D)     -> D split into G contiguous spans (sizes differ by <= 1)
//   layer-wise:    any          -> G = 1
class QuantGroupLayout {
 public:
  QuantGroupLayout() = default;

  static QuantGroupLayout head_wise(const Shape& shape);
  static QuantGroupLayout channel_group(const Shape& shape, std::size_t groups);
  static QuantGroupLayout layer_wise(const Shape& shape);

  GroupingKind kind() const { return kind_; }
  std::size_t group_count() const { return groups_; }
  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_numel(shape_); }
  std::size_t samples() const { return shape_.empty() ? 1 : shape_[0]; }

  // Group id in [0, G) of a flat row-major index.
  std::size_t group_of(std::size_t flat) const;

  // Channel span [begin, end) of group g (channel-group layouts only).
  std::pair<std::size_t, std::size_t> channel_span(std::size_t g) const;

  // Visits maximal contiguous runs of one group:
  // fn(begin, end, group, sample).
  template <typename Fn>
  void for_each_run(Fn&& fn) const {
    const std::size_t n = numel();
    const std::size_t per_sample = n / samples();
    switch (kind_) {
      case GroupingKind::kLayerWise:
        for (std::size_t s = 0; s < samples(); ++s) fn(s * per_sample, (s + 1) * per_sample, 0, s);
        break;
      case GroupingKind::kHeadWise: {
        const std::size_t inner = per_sample / groups_;
        for (std::size_t s = 0; s < samples(); ++s) {
          for (std::size_t g = 0; g < groups_; ++g) {
            const std::size_t b = s * per_sample + g * inner;
            fn(b, b + inner, g, s);
          }
        }
        break;
      }
      case GroupingKind::kChannelGroup: {
        const std::size_t d = shape_.back();
        const std::size_t rows = n / d;
        const std::size_t rows_per_sample = rows / samples();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t g = 0; g < groups_; ++g) {
            auto [lo, hi] = channel_span(g);
            fn(r * d + lo, r * d + hi, g, r / rows_per_sample);
          }
        }
        break;
      }
    }
  }

  friend bool operator==(const QuantGroupLayout&, const QuantGroupLayout&) = default;

 private:
  QuantGroupLayout(GroupingKind kind, Shape shape, std::size_t groups)
      : kind_(kind), shape_(std::move(shape)), groups_(groups) {}

  GroupingKind kind_ = GroupingKind::kLayerWise;
  Shape shape_;
  std::size_t groups_ = 1;
};

// Persistent per-site quantizer parameters. For the asymmetric scheme alpha is
// the clipping range and beta the offset; for the symmetric scheme alpha holds
// the clipping magnitude max|x| and beta stays 0.
struct QuantizerState {
  std::vector<float> alpha;
  std::vector<float> beta;
  float lambda = kDefaultLambda;
  QuantScheme scheme = QuantScheme::kAsymmetric;
  Rounding rounding = Rounding::kStochastic;
  StatsMode stats = StatsMode::kRunningEstimate;
  bool initialized = false;

  std::size_t group_count() const { return alpha.size(); }
};

// 8-bit payload plus the parameters it was encoded with.
struct CompressedActivation {
  std::vector<std::uint8_t> payload;
  Shape shape;
  QuantGroupLayout layout;
  // One entry per group, or per (sample, group) at index sample * G + g when
  // per_sample is set.
  std::vector<float> alpha_snapshot;
  std::vector<float> beta_snapshot;
  QuantScheme scheme = QuantScheme::kAsymmetric;
  bool per_sample = false;
  Precision original_precision = Precision::kStandard;

  std::size_t numel() const { return payload.size(); }
  std::size_t payload_bytes() const { return payload.size(); }
  // Bytes of stored quantization parameters: 4 per alpha, plus 4 per beta for
  // the asymmetric scheme.
  std::size_t param_bytes() const;
};

struct GroupMinMax {
  std::vector<float> min;
  std::vector<float> max;
};

// Exact extrema per group, or per (sample, group) when per_sample is set.
GroupMinMax group_min_max(const TensorF& x, const QuantGroupLayout& layout, bool per_sample = false);

// First-iteration initialization from min-max values.
void init_params(QuantizerState& state, const TensorF& x, const QuantGroupLayout& layout);

// alpha <- lambda * alpha + (1 - lambda) * (max - min)
// beta  <- lambda * beta  + (1 - lambda) * min
// alpha is floored at kAlphaFloor afterwards. The symmetric scheme tracks
// max|x| in alpha instead.
void update_running_estimates(QuantizerState& state, const TensorF& x, const QuantGroupLayout& layout);

// Rounds each element up with probability frac(x), down otherwise.
TensorF stochastic_round(const TensorF& x, Rng& rng);

// Asymmetric encode: clip(round((x - beta) * 255 / alpha), 0, 255).
// Running-estimate mode requires an initialized state; per-sample mode
// computes its own parameters and leaves the state untouched. Dispatches to
// quantize_symmetric when state.scheme is symmetric.
CompressedActivation quantize(const TensorF& x, const QuantizerState& state, const QuantGroupLayout& layout,
                              Rng& rng);

// Symmetric encode centered at code 128: clip(round(x * 127 / m) + 128, 0, 255)
// with m the group's clipping magnitude.
CompressedActivation quantize_symmetric(const TensorF& x, const QuantizerState& state,
                                        const QuantGroupLayout& layout, Rng& rng);

// code * alpha / 255 + beta using the stored snapshots.
TensorF dequantize(const CompressedActivation& c);

// A quantizer site: state plus its private rounding stream. compress() runs
// the full per-step protocol: initialize from min-max on first use, encode
// with the current parameters, then fold this batch's raw extrema into the
// running estimates.
class Quantizer {
 public:
  Quantizer() = default;
  Quantizer(QuantizerState state, Rng rng) : state_(std::move(state)), rng_(rng) {}

  CompressedActivation compress(const TensorF& x, const QuantGroupLayout& layout);

  const QuantizerState& state() const { return state_; }
  QuantizerState& mutable_state() { return state_; }
  const Rng& rng() const { return rng_; }
  Rng& mutable_rng() { return rng_; }

 private:
  QuantizerState state_;
  Rng rng_;
};

}  // namespace qact
