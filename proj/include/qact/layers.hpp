// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "qact/ledger.hpp"
#include "qact/quantizer.hpp"
#include "qact/tensor.hpp"

namespace qact {

// Sub-layer a stored tensor belongs to. Tensors outside MSA and FFN (final
// LayerNorm, classifier input) are never compressed.
enum class Module { kMsa, kFfn, kNone };

// Which layout family a stored tensor uses: per-head tensors shaped
// (B, H, ...) or token sequences shaped (..., D).
enum class ActivationKind { kAttention, kHidden };

struct Granularity {
  enum class Kind { kHead, kLayer, kChannel };
  Kind kind = Kind::kHead;
  // Channel groups for hidden tensors when kind == kChannel.
  std::size_t channel_groups = 0;

  friend bool operator==(const Granularity&, const Granularity&) = default;
};

std::string to_string(const Granularity& g);
// "head", "layer" or "channel:G" with G > 0.
std::optional<Granularity> parse_granularity(std::string_view s);

struct CompressionPolicy {
  bool matmul = false;
  bool softmax = false;
  bool layernorm = false;
  bool gelu = false;
  bool msa = true;
  bool ffn = true;
  Granularity granularity;
  QuantScheme scheme = QuantScheme::kAsymmetric;
  Rounding rounding = Rounding::kStochastic;
  StatsMode stats = StatsMode::kRunningEstimate;
  float lambda = kDefaultLambda;
  // Debug: quantize and account as usual, but keep an exact copy and use it in
  // backward.
  bool debug_exact_backward = false;

  static CompressionPolicy none() { return {}; }
  static CompressionPolicy all_ops() {
    CompressionPolicy p;
    p.matmul = p.softmax = p.layernorm = p.gelu = true;
    return p;
  }

  bool op_enabled(OpKind op) const;
  void set_op(OpKind op, bool on);
  bool module_enabled(Module m) const;
  bool compresses(OpKind op, Module m) const { return op_enabled(op) && module_enabled(m); }
  bool any_enabled() const { return matmul || softmax || layernorm || gelu; }

  friend bool operator==(const CompressionPolicy&, const CompressionPolicy&) = default;
};

// One place in the network where a tensor is saved for backward.
struct Site {
  std::string id;
  OpKind op = OpKind::kMatMul;
  Module module = Module::kNone;
  ActivationKind kind = ActivationKind::kHidden;
};

template <Real T>
class StoredActivation {
 public:
  StoredActivation() = default;
  StoredActivation(Tensor<T> exact) : value_(std::move(exact)) {
    bytes_ = StoredBytes::exact(std::get<Tensor<T>>(value_).numel());
  }
  StoredActivation(CompressedActivation c, std::optional<Tensor<T>> shadow)
      : value_(std::move(c)), shadow_(std::move(shadow)) {
    const auto& ca = std::get<CompressedActivation>(value_);
    bytes_ = StoredBytes::compressed_payload(ca.numel(), ca.param_bytes());
  }

  bool compressed() const { return std::holds_alternative<CompressedActivation>(value_); }
  const StoredBytes& bytes() const { return bytes_; }
  const CompressedActivation* compressed_value() const { return std::get_if<CompressedActivation>(&value_); }

  // The tensor backward should use: exact, shadow, or dequantized.
  Tensor<T> restore() const {
    if (const auto* t = std::get_if<Tensor<T>>(&value_)) return *t;
    if (shadow_) return *shadow_;
    if constexpr (std::is_same_v<T, float>) {
      return dequantize(std::get<CompressedActivation>(value_));
    } else {
      return dequantize(std::get<CompressedActivation>(value_)).template cast<T>();
    }
  }

 private:
  std::variant<Tensor<T>, CompressedActivation> value_;
  std::optional<Tensor<T>> shadow_;
  StoredBytes bytes_;
};

// Decides, per site, whether a saved tensor is kept exact or quantized, owns
// the per-site quantizers, and reports every store and release to the ledger.
// Persists across training steps.
class ActivationStore {
 public:
  ActivationStore(CompressionPolicy policy, std::uint64_t seed, std::size_t heads, MemoryLedger* ledger = nullptr);

  template <Real T>
  StoredActivation<T> save(const Site& site, const Tensor<T>& x);
  // Always exact (small full-precision statistics).
  template <Real T>
  StoredActivation<T> save_exact(const Site& site, const Tensor<T>& x);
  void release(const StoredBytes& bytes);

  const CompressionPolicy& policy() const { return policy_; }
  std::map<std::string, Quantizer>& quantizers() { return quantizers_; }
  const std::map<std::string, Quantizer>& quantizers() const { return quantizers_; }
  MemoryLedger* ledger() const { return ledger_; }
  std::uint64_t seed() const { return seed_; }

  QuantGroupLayout layout_for(const Site& site, const Shape& shape) const;
  Quantizer& quantizer_for(const Site& site);

 private:
  CompressionPolicy policy_;
  std::uint64_t seed_;
  std::size_t heads_;
  MemoryLedger* ledger_;
  std::map<std::string, Quantizer> quantizers_;
};

// Saved-for-backward state of one layer. Single use: backward consumes it and
// releases its bytes.
template <Real T>
class LayerContext {
 public:
  void put(std::string tag, StoredActivation<T> value, ActivationStore* store) {
    store_ = store;
    entries_.emplace_back(std::move(tag), std::move(value));
  }
  const StoredActivation<T>& get(std::string_view tag) const;
  Tensor<T> restore(std::string_view tag) const { return get(tag).restore(); }
  const std::vector<std::pair<std::string, StoredActivation<T>>>& entries() const { return entries_; }

  // Marks the context used; throws ContractError on the second call.
  void consume();
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::pair<std::string, StoredActivation<T>>> entries_;
  ActivationStore* store_ = nullptr;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Primitive layers. A null store or context means inference: nothing saved.

inline constexpr double kLayerNormEps = 1e-5;

template <Real T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const Site& site,
                         ActivationStore* store, LayerContext<T>* ctx);
template <Real T>
struct LinearGrads {
  Tensor<T> dx, dw, db;
};
template <Real T>
LinearGrads<T> linear_backward(LayerContext<T>& ctx, const Tensor<T>& w, const Tensor<T>& dy);

// Batched a x b saving both operands (attention products).
template <Real T>
Tensor<T> matmul_forward(const Tensor<T>& a, const Tensor<T>& b, const Site& site_a, const Site& site_b,
                         ActivationStore* store, LayerContext<T>* ctx);
template <Real T>
std::pair<Tensor<T>, Tensor<T>> matmul_backward(LayerContext<T>& ctx, const Tensor<T>& dy);

// Softmax over the last axis; saves its output.
template <Real T>
Tensor<T> softmax_forward(const Tensor<T>& x, const Site& site, ActivationStore* store, LayerContext<T>* ctx);
template <Real T>
Tensor<T> softmax_backward(LayerContext<T>& ctx, const Tensor<T>& dy);

// Saves the normalized input plus per-row mean and inverse std (exact).
template <Real T>
Tensor<T> layernorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const Site& site,
                            ActivationStore* store, LayerContext<T>* ctx);
template <Real T>
struct LayerNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};
template <Real T>
LayerNormGrads<T> layernorm_backward(LayerContext<T>& ctx, const Tensor<T>& gamma, const Tensor<T>& dy);

template <Real T>
Tensor<T> gelu_forward(const Tensor<T>& x, const Site& site, ActivationStore* store, LayerContext<T>* ctx);
template <Real T>
Tensor<T> gelu_backward(LayerContext<T>& ctx, const Tensor<T>& dy);

// ---------------------------------------------------------------------------
// Composite sub-layers.

template <Real T>
struct AttentionParams {
  Tensor<T> w_qkv, b_qkv;    // (D, 3D), (3D)
  Tensor<T> w_proj, b_proj;  // (D, D), (D)
};

template <Real T>
struct AttentionContext {
  LayerContext<T> qkv, scores, probs, mix, proj;
};

template <Real T>
struct AttentionGrads {
  Tensor<T> dx;
  AttentionParams<T> d;
};

// x (B, N, D) -> (B, N, D). Site ids are prefixed with `prefix`.
template <Real T>
Tensor<T> mhsa_forward(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads, const std::string& prefix,
                       ActivationStore* store, AttentionContext<T>* ctx);
template <Real T>
AttentionGrads<T> mhsa_backward(AttentionContext<T>& ctx, const AttentionParams<T>& p, std::size_t heads,
                                const Tensor<T>& dy);

template <Real T>
struct FfnParams {
  Tensor<T> w1, b1;  // (D, H), (H)
  Tensor<T> w2, b2;  // (H, D), (D)
};

template <Real T>
struct FfnContext {
  LayerContext<T> fc1, act, fc2;
};

template <Real T>
struct FfnGrads {
  Tensor<T> dx;
  FfnParams<T> d;
};

template <Real T>
Tensor<T> ffn_forward(const Tensor<T>& x, const FfnParams<T>& p, const std::string& prefix, ActivationStore* store,
                      FfnContext<T>* ctx);
template <Real T>
FfnGrads<T> ffn_backward(FfnContext<T>& ctx, const FfnParams<T>& p, const Tensor<T>& dy);

}  // namespace qact
