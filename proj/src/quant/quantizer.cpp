// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "qact/simd/kernels.hpp"

namespace qact {

std::string_view to_string(GroupingKind k) {
  switch (k) {
    case GroupingKind::kHeadWise:
      return "head";
    case GroupingKind::kChannelGroup:
      return "channel";
    case GroupingKind::kLayerWise:
      return "layer";
  }
  return "?";
}

std::string_view to_string(QuantScheme s) {
  return s == QuantScheme::kAsymmetric ? "asymmetric" : "symmetric";
}

std::string_view to_string(Rounding r) { return r == Rounding::kStochastic ? "stochastic" : "nearest"; }

std::string_view to_string(StatsMode m) { return m == StatsMode::kRunningEstimate ? "running" : "per-sample"; }

std::optional<QuantScheme> parse_scheme(std::string_view s) {
  if (s == "asymmetric") return QuantScheme::kAsymmetric;
  if (s == "symmetric") return QuantScheme::kSymmetric;
  return std::nullopt;
}

std::optional<Rounding> parse_rounding(std::string_view s) {
  if (s == "stochastic") return Rounding::kStochastic;
  if (s == "nearest") return Rounding::kNearest;
  return std::nullopt;
}

std::optional<StatsMode> parse_stats(std::string_view s) {
  if (s == "running") return StatsMode::kRunningEstimate;
  if (s == "per-sample") return StatsMode::kPerSample;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Layouts

QuantGroupLayout QuantGroupLayout::head_wise(const Shape& shape) {
  if (shape.size() < 3) {
    throw LayoutError("head-wise layout needs a (B, heads, ...) tensor, got " + shape_str(shape));
  }
  return QuantGroupLayout(GroupingKind::kHeadWise, shape, shape[1]);
}

QuantGroupLayout QuantGroupLayout::channel_group(const Shape& shape, std::size_t groups) {
  if (shape.size() < 2) {
    throw LayoutError("channel-group layout needs a (B, ..., D) tensor, got " + shape_str(shape));
  }
  if (groups == 0 || groups > shape.back()) {
    throw LayoutError("channel-group layout: " + std::to_string(groups) + " groups over " +
                      std::to_string(shape.back()) + " channels leaves a group empty");
  }
  return QuantGroupLayout(GroupingKind::kChannelGroup, shape, groups);
}

QuantGroupLayout QuantGroupLayout::layer_wise(const Shape& shape) {
  if (shape.empty()) throw LayoutError("layer-wise layout needs a tensor with a sample axis");
  return QuantGroupLayout(GroupingKind::kLayerWise, shape, 1);
}

std::pair<std::size_t, std::size_t> QuantGroupLayout::channel_span(std::size_t g) const {
  const std::size_t d = shape_.back();
  const std::size_t base = d / groups_;
  const std::size_t extra = d % groups_;
  const std::size_t begin = g * base + std::min(g, extra);
  return {begin, begin + base + (g < extra ? 1 : 0)};
}

std::size_t QuantGroupLayout::group_of(std::size_t flat) const {
  switch (kind_) {
    case GroupingKind::kLayerWise:
      return 0;
    case GroupingKind::kHeadWise: {
      const std::size_t per_sample = numel() / samples();
      return (flat % per_sample) / (per_sample / groups_);
    }
    case GroupingKind::kChannelGroup: {
      const std::size_t col = flat % shape_.back();
      const std::size_t base = shape_.back() / groups_;
      const std::size_t extra = shape_.back() % groups_;
      const std::size_t wide = extra * (base + 1);
      return col < wide ? col / (base + 1) : extra + (col - wide) / base;
    }
  }
  return 0;
}

std::size_t CompressedActivation::param_bytes() const {
  const std::size_t per_param = sizeof(float);
  const std::size_t arrays = scheme == QuantScheme::kAsymmetric ? 2 : 1;
  return alpha_snapshot.size() * per_param * arrays;
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

void require_layout(const TensorF& x, const QuantGroupLayout& layout) {
  if (layout.shape() != x.shape()) {
    throw LayoutError("layout for " + shape_str(layout.shape()) + " applied to tensor " + shape_str(x.shape()));
  }
}

void require_groups(const QuantizerState& state, const QuantGroupLayout& layout) {
  if (state.group_count() != layout.group_count()) {
    throw LayoutError("quantizer holds " + std::to_string(state.group_count()) + " groups but layout has " +
                      std::to_string(layout.group_count()));
  }
}

std::vector<float> group_abs_max(const TensorF& x, const QuantGroupLayout& layout, bool per_sample) {
  const auto& k = simd::active_kernels();
  const std::size_t g_count = layout.group_count();
  std::vector<float> out(per_sample ? layout.samples() * g_count : g_count, 0.0f);
  const float* data = x.data().data();
  layout.for_each_run([&](std::size_t b, std::size_t e, std::size_t g, std::size_t s) {
    float& slot = out[per_sample ? s * g_count + g : g];
    slot = std::max(slot, k.abs_max(data + b, e - b));
  });
  return out;
}

std::vector<double> draw_noise(std::size_t n, Rng& rng) {
  std::vector<double> noise(n);
  for (double& u : noise) u = rng.uniform();
  return noise;
}

// Shared encode loop; `offset`/`scale` per snapshot slot.
template <typename SlotFn>
void encode_runs(const TensorF& x, const QuantGroupLayout& layout, Rounding rounding, Rng& rng, double code_bias,
                 bool per_sample, SlotFn&& slot_params, std::vector<std::uint8_t>& payload) {
  const auto& k = simd::active_kernels();
  payload.resize(x.numel());
  const float* data = x.data().data();
  const std::size_t g_count = layout.group_count();
  std::vector<double> noise;
  if (rounding == Rounding::kStochastic) noise = draw_noise(x.numel(), rng);
  layout.for_each_run([&](std::size_t b, std::size_t e, std::size_t g, std::size_t s) {
    const auto [offset, scale] = slot_params(per_sample ? s * g_count + g : g);
    if (rounding == Rounding::kStochastic) {
      k.encode_stochastic(data + b, e - b, offset, scale, code_bias, noise.data() + b, payload.data() + b);
    } else {
      k.encode_nearest(data + b, e - b, offset, scale, code_bias, payload.data() + b);
    }
  });
}

}  // namespace

GroupMinMax group_min_max(const TensorF& x, const QuantGroupLayout& layout, bool per_sample) {
  require_layout(x, layout);
  const auto& k = simd::active_kernels();
  const std::size_t g_count = layout.group_count();
  const std::size_t slots = per_sample ? layout.samples() * g_count : g_count;
  GroupMinMax out;
  out.min.assign(slots, 0.0f);
  out.max.assign(slots, 0.0f);
  std::vector<bool> seen(slots, false);
  const float* data = x.data().data();
  layout.for_each_run([&](std::size_t b, std::size_t e, std::size_t g, std::size_t s) {
    const std::size_t slot = per_sample ? s * g_count + g : g;
    float lo = 0.0f;
    float hi = 0.0f;
    k.min_max(data + b, e - b, &lo, &hi);
    if (!seen[slot]) {
      out.min[slot] = lo;
      out.max[slot] = hi;
      seen[slot] = true;
    } else {
      out.min[slot] = std::min(out.min[slot], lo);
      out.max[slot] = std::max(out.max[slot], hi);
    }
  });
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw LayoutError("quantization group with no elements");
  }
  return out;
}

void init_params(QuantizerState& state, const TensorF& x, const QuantGroupLayout& layout) {
  if (state.initialized) throw ContractError("init_params: quantizer already initialized");
  ensure_finite(x, "quantizer input");
  const std::size_t g_count = layout.group_count();
  if (state.scheme == QuantScheme::kSymmetric) {
    const auto mags = group_abs_max(x, layout, false);
    state.alpha.resize(g_count);
    state.beta.assign(g_count, 0.0f);
    for (std::size_t g = 0; g < g_count; ++g) state.alpha[g] = std::max(mags[g], kAlphaFloor);
  } else {
    const GroupMinMax mm = group_min_max(x, layout);
    state.alpha.resize(g_count);
    state.beta.resize(g_count);
    for (std::size_t g = 0; g < g_count; ++g) {
      state.alpha[g] = std::max(mm.max[g] - mm.min[g], kAlphaFloor);
      state.beta[g] = mm.min[g];
    }
  }
  state.initialized = true;
}

void update_running_estimates(QuantizerState& state, const TensorF& x, const QuantGroupLayout& layout) {
  if (!state.initialized) throw ContractError("update_running_estimates: quantizer not initialized");
  if (state.stats != StatsMode::kRunningEstimate) {
    throw ContractError("update_running_estimates: quantizer uses per-sample statistics");
  }
  require_groups(state, layout);
  ensure_finite(x, "quantizer input");
  const float lambda = state.lambda;
  const float keep = 1.0f - lambda;
  if (state.scheme == QuantScheme::kSymmetric) {
    const auto mags = group_abs_max(x, layout, false);
    for (std::size_t g = 0; g < mags.size(); ++g) {
      state.alpha[g] = std::max(lambda * state.alpha[g] + keep * mags[g], kAlphaFloor);
    }
    return;
  }
  const GroupMinMax mm = group_min_max(x, layout);
  for (std::size_t g = 0; g < mm.min.size(); ++g) {
    state.alpha[g] = std::max(lambda * state.alpha[g] + keep * (mm.max[g] - mm.min[g]), kAlphaFloor);
    state.beta[g] = lambda * state.beta[g] + keep * mm.min[g];
  }
}

TensorF stochastic_round(const TensorF& x, Rng& rng) {
  TensorF out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float lo = std::floor(x[i]);
    out[i] = lo + (rng.uniform() < static_cast<double>(x[i] - lo) ? 1.0f : 0.0f);
  }
  ensure_finite(out, "stochastic_round");
  return out;
}

CompressedActivation quantize(const TensorF& x, const QuantizerState& state, const QuantGroupLayout& layout,
                              Rng& rng) {
  if (state.scheme == QuantScheme::kSymmetric) return quantize_symmetric(x, state, layout, rng);
  require_layout(x, layout);
  ensure_finite(x, "quantizer input");

  CompressedActivation c;
  c.shape = x.shape();
  c.layout = layout;
  c.scheme = QuantScheme::kAsymmetric;
  if (state.stats == StatsMode::kPerSample) {
    const GroupMinMax mm = group_min_max(x, layout, true);
    c.per_sample = true;
    c.alpha_snapshot.resize(mm.min.size());
    c.beta_snapshot = mm.min;
    for (std::size_t i = 0; i < mm.min.size(); ++i) {
      c.alpha_snapshot[i] = std::max(mm.max[i] - mm.min[i], kAlphaFloor);
    }
  } else {
    if (!state.initialized) throw ContractError("quantize: quantizer not initialized");
    require_groups(state, layout);
    c.alpha_snapshot = state.alpha;
    c.beta_snapshot = state.beta;
  }
  encode_runs(
      x, layout, state.rounding, rng, 0.0, c.per_sample,
      [&](std::size_t slot) {
        return std::pair<double, double>{static_cast<double>(c.beta_snapshot[slot]),
                                         255.0 / static_cast<double>(c.alpha_snapshot[slot])};
      },
      c.payload);
  return c;
}

CompressedActivation quantize_symmetric(const TensorF& x, const QuantizerState& state,
                                        const QuantGroupLayout& layout, Rng& rng) {
  if (state.scheme != QuantScheme::kSymmetric) throw ContractError("quantize_symmetric: state is asymmetric");
  if (state.stats == StatsMode::kPerSample) {
    throw ContractError("symmetric quantization does not support per-sample statistics");
  }
  if (!state.initialized) throw ContractError("quantize_symmetric: quantizer not initialized");
  require_layout(x, layout);
  require_groups(state, layout);
  ensure_finite(x, "quantizer input");

  CompressedActivation c;
  c.shape = x.shape();
  c.layout = layout;
  c.scheme = QuantScheme::kSymmetric;
  c.alpha_snapshot = state.alpha;
  c.beta_snapshot.assign(state.alpha.size(), 0.0f);
  encode_runs(
      x, layout, state.rounding, rng, 128.0, false,
      [&](std::size_t slot) {
        return std::pair<double, double>{0.0, 127.0 / static_cast<double>(c.alpha_snapshot[slot])};
      },
      c.payload);
  return c;
}

TensorF dequantize(const CompressedActivation& c) {
  TensorF out(c.shape);
  const auto& k = simd::active_kernels();
  const bool symmetric = c.scheme == QuantScheme::kSymmetric;
  const double code_bias = symmetric ? 128.0 : 0.0;
  const double levels = symmetric ? 127.0 : 255.0;
  const std::size_t g_count = c.layout.group_count();
  float* dst = out.data().data();
  c.layout.for_each_run([&](std::size_t b, std::size_t e, std::size_t g, std::size_t s) {
    const std::size_t slot = c.per_sample ? s * g_count + g : g;
    const double step = static_cast<double>(c.alpha_snapshot[slot]) / levels;
    k.decode(c.payload.data() + b, e - b, step, static_cast<double>(c.beta_snapshot[slot]), code_bias, dst + b);
  });
  return out;
}

CompressedActivation Quantizer::compress(const TensorF& x, const QuantGroupLayout& layout) {
  if (state_.stats == StatsMode::kPerSample) return quantize(x, state_, layout, rng_);
  if (!state_.initialized) {
    init_params(state_, x, layout);
    return quantize(x, state_, layout, rng_);
  }
  CompressedActivation c = quantize(x, state_, layout, rng_);
  update_running_estimates(state_, x, layout);
  return c;
}

}  // namespace qact
