// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qact/ops.hpp"
#include "qact/rng.hpp"

namespace qact {

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || seq_len == 0 || mlp_ratio == 0 || num_classes == 0 || vocab == 0) {
    throw std::invalid_argument("model config: all sizes must be positive");
  }
  if (dim % heads != 0) {
    throw std::invalid_argument("model config: dim " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
}

ModelParams<float> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::for_stream(seed, "init");
  const auto normal = [&](Shape shape) {
    TensorF t(std::move(shape));
    for (float& v : t.data()) v = static_cast<float>(rng.normal(0.0, 0.02));
    return t;
  };
  const auto zeros = [](std::size_t n) { return TensorF({n}); };
  const auto ones = [](std::size_t n) { return TensorF::full({n}, 1.0f); };

  const std::size_t d = cfg.dim;
  const std::size_t h = cfg.hidden();
  ModelParams<float> p;
  p.tok_emb = normal({cfg.vocab, d});
  p.pos_emb = normal({cfg.seq_len, d});
  p.blocks.resize(cfg.depth);
  for (auto& b : p.blocks) {
    b.ln1_g = ones(d);
    b.ln1_b = zeros(d);
    b.attn.w_qkv = normal({d, 3 * d});
    b.attn.b_qkv = zeros(3 * d);
    b.attn.w_proj = normal({d, d});
    b.attn.b_proj = zeros(d);
    b.ln2_g = ones(d);
    b.ln2_b = zeros(d);
    b.ffn.w1 = normal({d, h});
    b.ffn.b1 = zeros(h);
    b.ffn.w2 = normal({h, d});
    b.ffn.b2 = zeros(d);
  }
  p.lnf_g = ones(d);
  p.lnf_b = zeros(d);
  p.w_head = normal({d, cfg.num_classes});
  p.b_head = zeros(cfg.num_classes);
  return p;
}

namespace {

void check_batch(const ModelConfig& cfg, const Batch& batch) {
  if (batch.size == 0 || batch.seq_len != cfg.seq_len || batch.tokens.size() != batch.size * batch.seq_len) {
    throw DimensionError("batch shape does not match model sequence length " + std::to_string(cfg.seq_len));
  }
  for (std::int32_t t : batch.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab) {
      throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i); }

}  // namespace

template <Real T>
Tensor<T> model_forward(const ModelParams<T>& p, const ModelConfig& cfg, const Batch& batch, ActivationStore* store,
                        ModelContext<T>* ctx) {
  check_batch(cfg, batch);
  const std::size_t b = batch.size;
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.dim;

  Tensor<T> x({b, n, d});
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t tok = static_cast<std::size_t>(batch.tokens[s * n + t]);
      for (std::size_t j = 0; j < d; ++j) x[(s * n + t) * d + j] = p.tok_emb[tok * d + j] + p.pos_emb[t * d + j];
    }
  }

  if (ctx) {
    ctx->blocks.clear();
    ctx->blocks.resize(cfg.depth);
    ctx->tokens = batch.tokens;
    ctx->batch = b;
  }
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const BlockParams<T>& bp = p.blocks[i];
    BlockContext<T>* bc = ctx ? &ctx->blocks[i] : nullptr;
    const std::string prefix = block_prefix(i);
    const Site ln1{prefix + ".msa.ln", OpKind::kLayerNorm, Module::kMsa, ActivationKind::kHidden};
    const Site ln2{prefix + ".ffn.ln", OpKind::kLayerNorm, Module::kFfn, ActivationKind::kHidden};

    const Tensor<T> h1 = layernorm_forward(x, bp.ln1_g, bp.ln1_b, ln1, store, bc ? &bc->ln1 : nullptr);
    x = ops::add(x, mhsa_forward(h1, bp.attn, cfg.heads, prefix + ".msa", store, bc ? &bc->attn : nullptr));
    const Tensor<T> h2 = layernorm_forward(x, bp.ln2_g, bp.ln2_b, ln2, store, bc ? &bc->ln2 : nullptr);
    x = ops::add(x, ffn_forward(h2, bp.ffn, prefix + ".ffn", store, bc ? &bc->ffn : nullptr));
  }

  const Site lnf{"head.ln", OpKind::kLayerNorm, Module::kNone, ActivationKind::kHidden};
  const Site fc{"head.fc", OpKind::kMatMul, Module::kNone, ActivationKind::kHidden};
  const Tensor<T> hf = layernorm_forward(x, p.lnf_g, p.lnf_b, lnf, store, ctx ? &ctx->lnf : nullptr);
  const Tensor<T> pooled = ops::mean_axis(hf, 1);
  return linear_forward(pooled, p.w_head, p.b_head, fc, store, ctx ? &ctx->head : nullptr);
}

template <Real T>
ModelParams<T> model_backward(const ModelParams<T>& p, const ModelConfig& cfg, ModelContext<T>& ctx,
                              const Tensor<T>& dlogits) {
  const std::size_t b = ctx.batch;
  const std::size_t n = cfg.seq_len;
  const std::size_t d = cfg.dim;
  ModelParams<T> g;
  g.blocks.resize(cfg.depth);

  LinearGrads<T> head = linear_backward(ctx.head, p.w_head, dlogits);
  g.w_head = std::move(head.dw);
  g.b_head = std::move(head.db);

  Tensor<T> dhf({b, n, d});
  const T inv_n = T{1} / static_cast<T>(n);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t j = 0; j < d; ++j) dhf[(s * n + t) * d + j] = head.dx[s * d + j] * inv_n;
    }
  }
  LayerNormGrads<T> lnf = layernorm_backward(ctx.lnf, p.lnf_g, dhf);
  g.lnf_g = std::move(lnf.dgamma);
  g.lnf_b = std::move(lnf.dbeta);
  Tensor<T> dx = std::move(lnf.dx);

  for (std::size_t i = cfg.depth; i-- > 0;) {
    const BlockParams<T>& bp = p.blocks[i];
    BlockContext<T>& bc = ctx.blocks[i];
    BlockParams<T>& bg = g.blocks[i];

    FfnGrads<T> ffn = ffn_backward(bc.ffn, bp.ffn, dx);
    LayerNormGrads<T> ln2 = layernorm_backward(bc.ln2, bp.ln2_g, ffn.dx);
    dx = ops::add(dx, ln2.dx);
    bg.ffn = std::move(ffn.d);
    bg.ln2_g = std::move(ln2.dgamma);
    bg.ln2_b = std::move(ln2.dbeta);

    AttentionGrads<T> attn = mhsa_backward(bc.attn, bp.attn, cfg.heads, dx);
    LayerNormGrads<T> ln1 = layernorm_backward(bc.ln1, bp.ln1_g, attn.dx);
    dx = ops::add(dx, ln1.dx);
    bg.attn = std::move(attn.d);
    bg.ln1_g = std::move(ln1.dgamma);
    bg.ln1_b = std::move(ln1.dbeta);
  }

  g.tok_emb = Tensor<T>(p.tok_emb.shape());
  g.pos_emb = Tensor<T>(p.pos_emb.shape());
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t tok = static_cast<std::size_t>(ctx.tokens[s * n + t]);
      for (std::size_t j = 0; j < d; ++j) {
        const T v = dx[(s * n + t) * d + j];
        g.tok_emb[tok * d + j] += v;
        g.pos_emb[t * d + j] += v;
      }
    }
  }
  return g;
}

template <Real T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0);
  const std::size_t c = logits.dim(1);
  LossResult<T> r;
  r.dlogits = Tensor<T>(logits.shape());
  const T inv_b = T{1} / static_cast<T>(b);
  for (std::size_t s = 0; s < b; ++s) {
    const T* row = logits.data().data() + s * c;
    const std::size_t label = static_cast<std::size_t>(labels[s]);
    if (label >= c) throw std::out_of_range("cross_entropy: label outside class range");
    const T mx = *std::max_element(row, row + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const T lse = mx + std::log(total);
    r.loss += (lse - row[label]) * inv_b;
    std::size_t argmax = 0;
    for (std::size_t j = 0; j < c; ++j) {
      r.dlogits[s * c + j] = std::exp(row[j] - lse) * inv_b;
      if (row[j] > row[argmax]) argmax = j;
    }
    r.dlogits[s * c + label] -= inv_b;
    if (argmax == label) ++r.correct;
  }
  if (!std::isfinite(r.loss)) throw NumericalError("cross_entropy: non-finite loss");
  return r;
}

#define QACT_INSTANTIATE_MODEL(T)                                                                                 \
  template Tensor<T> model_forward(const ModelParams<T>&, const ModelConfig&, const Batch&, ActivationStore*,    \
                                   ModelContext<T>*);                                                             \
  template ModelParams<T> model_backward(const ModelParams<T>&, const ModelConfig&, ModelContext<T>&,            \
                                         const Tensor<T>&);                                                       \
  template LossResult<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);

QACT_INSTANTIATE_MODEL(float)
QACT_INSTANTIATE_MODEL(double)

#undef QACT_INSTANTIATE_MODEL

}  // namespace qact
