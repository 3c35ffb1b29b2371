// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qact/layers.hpp"
#include "qact/tensor.hpp"

namespace qact {

struct ModelConfig {
  std::size_t depth = 2;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t seq_len = 16;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 2;
  std::size_t vocab = 16;

  std::size_t hidden() const { return dim * mlp_ratio; }
  std::size_t head_dim() const { return dim / heads; }
  // Throws std::invalid_argument on zero sizes or dim % heads != 0.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <Real T>
struct BlockParams {
  Tensor<T> ln1_g, ln1_b;
  AttentionParams<T> attn;
  Tensor<T> ln2_g, ln2_b;
  FfnParams<T> ffn;
};

// Token embedding -> depth x (LN -> MSA -> residual, LN -> FFN -> residual)
// -> LN -> mean over tokens -> linear classifier.
template <Real T>
struct ModelParams {
  Tensor<T> tok_emb;  // (vocab, D)
  Tensor<T> pos_emb;  // (N, D)
  std::vector<BlockParams<T>> blocks;
  Tensor<T> lnf_g, lnf_b;
  Tensor<T> w_head, b_head;  // (D, C), (C)

  // fn(name, tensor, decay) over every parameter in a fixed order. `decay` is
  // false for biases and LayerNorm affine parameters.
  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor<T>& t, bool) { n += t.numel(); });
    return n;
  }

  // Same structure with every tensor zero-filled.
  ModelParams zeros_like() const {
    ModelParams out = *this;
    out.visit([](const std::string&, Tensor<T>& t, bool) { t = Tensor<T>(t.shape()); });
    return out;
  }

  template <Real U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.blocks.resize(blocks.size());
    std::vector<Tensor<U>> flat;
    visit([&](const std::string&, const Tensor<T>& t, bool) { flat.push_back(t.template cast<U>()); });
    std::size_t i = 0;
    out.visit([&](const std::string&, Tensor<U>& t, bool) { t = std::move(flat[i++]); });
    return out;
  }

 private:
  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn& fn) {
    fn("tok_emb", self.tok_emb, true);
    fn("pos_emb", self.pos_emb, true);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      auto& b = self.blocks[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      fn(p + "ln1.gamma", b.ln1_g, false);
      fn(p + "ln1.beta", b.ln1_b, false);
      fn(p + "attn.w_qkv", b.attn.w_qkv, true);
      fn(p + "attn.b_qkv", b.attn.b_qkv, false);
      fn(p + "attn.w_proj", b.attn.w_proj, true);
      fn(p + "attn.b_proj", b.attn.b_proj, false);
      fn(p + "ln2.gamma", b.ln2_g, false);
      fn(p + "ln2.beta", b.ln2_b, false);
      fn(p + "ffn.w1", b.ffn.w1, true);
      fn(p + "ffn.b1", b.ffn.b1, false);
      fn(p + "ffn.w2", b.ffn.w2, true);
      fn(p + "ffn.b2", b.ffn.b2, false);
    }
    fn("lnf.gamma", self.lnf_g, false);
    fn("lnf.beta", self.lnf_b, false);
    fn("head.w", self.w_head, true);
    fn("head.b", self.b_head, false);
  }
};

// Normal(0, 0.02) weights and embeddings, zero biases, unit LayerNorm gains.
// The double-precision copy is cast from the float draw so both precisions
// start from the same values.
ModelParams<float> init_model(const ModelConfig& cfg, std::uint64_t seed);

struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> tokens;  // size * seq_len, row-major
  std::vector<std::int32_t> labels;  // size
};

template <Real T>
struct BlockContext {
  LayerContext<T> ln1;
  AttentionContext<T> attn;
  LayerContext<T> ln2;
  FfnContext<T> ffn;
};

template <Real T>
struct ModelContext {
  std::vector<BlockContext<T>> blocks;
  LayerContext<T> lnf;
  LayerContext<T> head;
  std::vector<std::int32_t> tokens;
  std::size_t batch = 0;
};

// logits (B, C). With a null context nothing is saved (evaluation).
template <Real T>
Tensor<T> model_forward(const ModelParams<T>& p, const ModelConfig& cfg, const Batch& batch, ActivationStore* store,
                        ModelContext<T>* ctx);

// Parameter gradients given dL/dlogits.
template <Real T>
ModelParams<T> model_backward(const ModelParams<T>& p, const ModelConfig& cfg, ModelContext<T>& ctx,
                              const Tensor<T>& dlogits);

template <Real T>
struct LossResult {
  T loss = 0;
  Tensor<T> dlogits;  // gradient of the mean loss
  std::size_t correct = 0;
};

// Mean softmax cross-entropy over the batch.
template <Real T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels);

}  // namespace qact
