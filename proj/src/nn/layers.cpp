// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/layers.hpp"

#include <cmath>

#include "qact/ops.hpp"

namespace qact {

std::string to_string(const Granularity& g) {
  switch (g.kind) {
    case Granularity::Kind::kHead:
      return "head";
    case Granularity::Kind::kLayer:
      return "layer";
    case Granularity::Kind::kChannel:
      return "channel:" + std::to_string(g.channel_groups);
  }
  return "?";
}

std::optional<Granularity> parse_granularity(std::string_view s) {
  if (s == "head") return Granularity{Granularity::Kind::kHead, 0};
  if (s == "layer") return Granularity{Granularity::Kind::kLayer, 0};
  constexpr std::string_view prefix = "channel:";
  if (!s.starts_with(prefix) || s.size() == prefix.size()) return std::nullopt;
  std::size_t groups = 0;
  for (char c : s.substr(prefix.size())) {
    if (c < '0' || c > '9' || groups > 1'000'000) return std::nullopt;
    groups = groups * 10 + static_cast<std::size_t>(c - '0');
  }
  if (groups == 0) return std::nullopt;
  return Granularity{Granularity::Kind::kChannel, groups};
}

bool CompressionPolicy::op_enabled(OpKind op) const {
  switch (op) {
    case OpKind::kMatMul:
      return matmul;
    case OpKind::kSoftmax:
      return softmax;
    case OpKind::kLayerNorm:
      return layernorm;
    case OpKind::kGelu:
      return gelu;
  }
  return false;
}

void CompressionPolicy::set_op(OpKind op, bool on) {
  switch (op) {
    case OpKind::kMatMul:
      matmul = on;
      break;
    case OpKind::kSoftmax:
      softmax = on;
      break;
    case OpKind::kLayerNorm:
      layernorm = on;
      break;
    case OpKind::kGelu:
      gelu = on;
      break;
  }
}

bool CompressionPolicy::module_enabled(Module m) const {
  switch (m) {
    case Module::kMsa:
      return msa;
    case Module::kFfn:
      return ffn;
    case Module::kNone:
      return false;
  }
  return false;
}

// ---------------------------------------------------------------------------
// ActivationStore

ActivationStore::ActivationStore(CompressionPolicy policy, std::uint64_t seed, std::size_t heads,
                                 MemoryLedger* ledger)
    : policy_(std::move(policy)), seed_(seed), heads_(heads), ledger_(ledger) {}

QuantGroupLayout ActivationStore::layout_for(const Site& site, const Shape& shape) const {
  const Granularity& g = policy_.granularity;
  if (g.kind == Granularity::Kind::kLayer) return QuantGroupLayout::layer_wise(shape);
  if (site.kind == ActivationKind::kAttention) return QuantGroupLayout::head_wise(shape);
  const std::size_t groups = g.kind == Granularity::Kind::kChannel ? g.channel_groups : heads_;
  return QuantGroupLayout::channel_group(shape, groups);
}

Quantizer& ActivationStore::quantizer_for(const Site& site) {
  auto it = quantizers_.find(site.id);
  if (it == quantizers_.end()) {
    QuantizerState state;
    state.lambda = policy_.lambda;
    state.scheme = policy_.scheme;
    state.rounding = policy_.rounding;
    state.stats = policy_.stats;
    it = quantizers_.emplace(site.id, Quantizer(std::move(state), Rng::for_stream(seed_, site.id))).first;
  }
  return it->second;
}

template <Real T>
StoredActivation<T> ActivationStore::save(const Site& site, const Tensor<T>& x) {
  StoredActivation<T> stored;
  if constexpr (std::is_same_v<T, float>) {
    if (policy_.compresses(site.op, site.module)) {
      CompressedActivation c = quantizer_for(site).compress(x, layout_for(site, x.shape()));
      std::optional<TensorF> shadow;
      if (policy_.debug_exact_backward) shadow = x;
      stored = StoredActivation<T>(std::move(c), std::move(shadow));
    } else {
      stored = StoredActivation<T>(x);
    }
  } else {
    stored = StoredActivation<T>(x);
  }
  if (ledger_) ledger_->record_store(site.id, site.op, stored.bytes());
  return stored;
}

template <Real T>
StoredActivation<T> ActivationStore::save_exact(const Site& site, const Tensor<T>& x) {
  StoredActivation<T> stored(x);
  if (ledger_) ledger_->record_store(site.id, site.op, stored.bytes());
  return stored;
}

void ActivationStore::release(const StoredBytes& bytes) {
  if (ledger_) ledger_->record_release(bytes);
}

template StoredActivation<float> ActivationStore::save(const Site&, const TensorF&);
template StoredActivation<double> ActivationStore::save(const Site&, const TensorD&);
template StoredActivation<float> ActivationStore::save_exact(const Site&, const TensorF&);
template StoredActivation<double> ActivationStore::save_exact(const Site&, const TensorD&);

// ---------------------------------------------------------------------------
// LayerContext

template <Real T>
const StoredActivation<T>& LayerContext<T>::get(std::string_view tag) const {
  for (const auto& [name, value] : entries_) {
    if (name == tag) return value;
  }
  throw ContractError("layer context has no entry '" + std::string(tag) + "'");
}

template <Real T>
void LayerContext<T>::consume() {
  if (consumed_) throw ContractError("layer context already consumed by a backward pass");
  if (entries_.empty()) throw ContractError("backward called on a context with no saved activations");
  consumed_ = true;
  if (store_) {
    for (const auto& entry : entries_) store_->release(entry.second.bytes());
  }
}

template class LayerContext<float>;
template class LayerContext<double>;

namespace {

template <Real T>
void stash(LayerContext<T>* ctx, ActivationStore* store, std::string tag, const Site& site, const Tensor<T>& x,
           bool exact = false) {
  if (ctx == nullptr) return;
  if (store == nullptr) {
    ctx->put(std::move(tag), StoredActivation<T>(x), nullptr);
  } else if (exact) {
    ctx->put(std::move(tag), store->save_exact(site, x), store);
  } else {
    ctx->put(std::move(tag), store->save(site, x), store);
  }
}

// Collapse all leading axes: (..., D) -> (rows, D).
template <Real T>
Tensor<T> as_rows(const Tensor<T>& x) {
  const std::size_t d = x.dim(x.rank() - 1);
  return x.reshape({x.numel() / d, d});
}

Site with_suffix(const Site& s, std::string_view suffix, OpKind op, ActivationKind kind) {
  return Site{s.id + std::string(suffix), op, s.module, kind};
}

// Slices a contiguous third of the (3, B, H, N, Dh) tensor.
template <Real T>
Tensor<T> slice_leading(const Tensor<T>& x, std::size_t index) {
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t n = shape_numel(shape);
  std::vector<T> data(x.data().begin() + static_cast<std::ptrdiff_t>(index * n),
                      x.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return Tensor<T>(shape, std::move(data));
}

template <Real T>
Tensor<T> stack3(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
  Shape shape = a.shape();
  shape.insert(shape.begin(), 3);
  std::vector<T> data;
  data.reserve(a.numel() * 3);
  for (const Tensor<T>* t : {&a, &b, &c}) data.insert(data.end(), t->data().begin(), t->data().end());
  return Tensor<T>(shape, std::move(data));
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear

template <Real T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const Site& site,
                         ActivationStore* store, LayerContext<T>* ctx) {
  if (w.rank() != 2 || x.dim(x.rank() - 1) != w.dim(0) || b.shape() != Shape{w.dim(1)}) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) + ", bias " +
                         shape_str(b.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor<T> y = ops::add_bias(ops::matmul(as_rows(x), w), b).reshape(out_shape);
  stash(ctx, store, "input", site, x);
  return y;
}

template <Real T>
LinearGrads<T> linear_backward(LayerContext<T>& ctx, const Tensor<T>& w, const Tensor<T>& dy) {
  ctx.consume();
  const Tensor<T> x = ctx.restore("input");
  const Tensor<T> dy2 = as_rows(dy);
  LinearGrads<T> g;
  g.dx = ops::matmul(dy2, ops::transpose(w)).reshape(x.shape());
  g.dw = ops::matmul(ops::transpose(as_rows(x)), dy2);
  g.db = ops::sum_axis(dy2, 0);
  return g;
}

// ---------------------------------------------------------------------------
// Attention products

template <Real T>
Tensor<T> matmul_forward(const Tensor<T>& a, const Tensor<T>& b, const Site& site_a, const Site& site_b,
                         ActivationStore* store, LayerContext<T>* ctx) {
  Tensor<T> y = ops::matmul(a, b);
  stash(ctx, store, "lhs", site_a, a);
  stash(ctx, store, "rhs", site_b, b);
  return y;
}

template <Real T>
std::pair<Tensor<T>, Tensor<T>> matmul_backward(LayerContext<T>& ctx, const Tensor<T>& dy) {
  ctx.consume();
  const Tensor<T> a = ctx.restore("lhs");
  const Tensor<T> b = ctx.restore("rhs");
  return {ops::matmul(dy, ops::transpose(b)), ops::matmul(ops::transpose(a), dy)};
}

// ---------------------------------------------------------------------------
// Softmax

template <Real T>
Tensor<T> softmax_forward(const Tensor<T>& x, const Site& site, ActivationStore* store, LayerContext<T>* ctx) {
  Tensor<T> y = ops::softmax(x, x.rank() - 1);
  stash(ctx, store, "output", site, y);
  return y;
}

template <Real T>
Tensor<T> softmax_backward(LayerContext<T>& ctx, const Tensor<T>& dy) {
  ctx.consume();
  const Tensor<T> y = ctx.restore("output");
  if (y.shape() != dy.shape()) throw DimensionError("softmax_backward: gradient shape mismatch");
  const std::size_t n = y.dim(y.rank() - 1);
  Tensor<T> dx(y.shape());
  for (std::size_t r = 0; r < y.numel() / n; ++r) {
    T dot = 0;
    for (std::size_t j = 0; j < n; ++j) dot += dy[r * n + j] * y[r * n + j];
    for (std::size_t j = 0; j < n; ++j) dx[r * n + j] = y[r * n + j] * (dy[r * n + j] - dot);
  }
  ensure_finite(dx, "softmax_backward");
  return dx;
}

// ---------------------------------------------------------------------------
// LayerNorm

template <Real T>
Tensor<T> layernorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const Site& site,
                            ActivationStore* store, LayerContext<T>* ctx) {
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layernorm: gamma/beta must have shape (" + std::to_string(d) + ")");
  }
  const std::size_t rows = x.numel() / d;
  const T eps = static_cast<T>(kLayerNormEps);
  Tensor<T> normalized(x.shape());
  Tensor<T> y(x.shape());
  Tensor<T> mean({rows});
  Tensor<T> rstd({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data().data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T xn = (row[j] - mu) * inv;
      normalized[r * d + j] = xn;
      y[r * d + j] = xn * gamma[j] + beta[j];
    }
  }
  ensure_finite(y, "layernorm");
  stash(ctx, store, "normalized", site, normalized);
  const Site stats{site.id + ".stats", OpKind::kLayerNorm, site.module, ActivationKind::kHidden};
  stash(ctx, store, "mean", stats, mean, true);
  stash(ctx, store, "rstd", stats, rstd, true);
  return y;
}

template <Real T>
LayerNormGrads<T> layernorm_backward(LayerContext<T>& ctx, const Tensor<T>& gamma, const Tensor<T>& dy) {
  ctx.consume();
  const Tensor<T> xn = ctx.restore("normalized");
  const Tensor<T> rstd = ctx.restore("rstd");
  if (xn.shape() != dy.shape()) throw DimensionError("layernorm_backward: gradient shape mismatch");
  const std::size_t d = xn.dim(xn.rank() - 1);
  const std::size_t rows = xn.numel() / d;
  LayerNormGrads<T> g;
  g.dx = Tensor<T>(xn.shape());
  g.dgamma = Tensor<T>({d});
  g.dbeta = Tensor<T>({d});
  std::vector<T> dxn(d);
  for (std::size_t r = 0; r < rows; ++r) {
    T m1 = 0;
    T m2 = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      g.dgamma[j] += dy[i] * xn[i];
      g.dbeta[j] += dy[i];
      dxn[j] = dy[i] * gamma[j];
      m1 += dxn[j];
      m2 += dxn[j] * xn[i];
    }
    m1 /= static_cast<T>(d);
    m2 /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      g.dx[i] = rstd[r] * (dxn[j] - m1 - xn[i] * m2);
    }
  }
  ensure_finite(g.dx, "layernorm_backward");
  return g;
}

// ---------------------------------------------------------------------------
// GELU

template <Real T>
Tensor<T> gelu_forward(const Tensor<T>& x, const Site& site, ActivationStore* store, LayerContext<T>* ctx) {
  Tensor<T> y = ops::gelu(x);
  stash(ctx, store, "input", site, x);
  return y;
}

template <Real T>
Tensor<T> gelu_backward(LayerContext<T>& ctx, const Tensor<T>& dy) {
  ctx.consume();
  return ops::mul(dy, ops::gelu_derivative(ctx.restore("input")));
}

// ---------------------------------------------------------------------------
// Multi-head self-attention

template <Real T>
Tensor<T> mhsa_forward(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads, const std::string& prefix,
                       ActivationStore* store, AttentionContext<T>* ctx) {
  if (x.rank() != 3) throw DimensionError("mhsa: expected (B, N, D) input, got " + shape_str(x.shape()));
  const std::size_t b = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t d = x.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("mhsa: dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const Site base{prefix, OpKind::kMatMul, Module::kMsa, ActivationKind::kHidden};
  const auto attention_site = [&](std::string_view suffix, OpKind op) {
    return with_suffix(base, suffix, op, ActivationKind::kAttention);
  };

  const Tensor<T> qkv = linear_forward(x, p.w_qkv, p.b_qkv, with_suffix(base, ".qkv", OpKind::kMatMul,
                                                                           ActivationKind::kHidden),
                                       store, ctx ? &ctx->qkv : nullptr);
  const Tensor<T> split = ops::permute(qkv.reshape({b, n, 3, heads, dh}), {2, 0, 3, 1, 4});
  const Tensor<T> q = slice_leading(split, 0);
  const Tensor<T> k = slice_leading(split, 1);
  const Tensor<T> v = slice_leading(split, 2);

  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const Tensor<T> scores = matmul_forward(q, ops::transpose(k), attention_site(".q", OpKind::kMatMul),
                                          attention_site(".k", OpKind::kMatMul), store,
                                          ctx ? &ctx->scores : nullptr);
  const Tensor<T> probs = softmax_forward(ops::scale(scores, scale), attention_site(".softmax", OpKind::kSoftmax),
                                          store, ctx ? &ctx->probs : nullptr);
  const Tensor<T> mixed = matmul_forward(probs, v, attention_site(".probs", OpKind::kMatMul),
                                         attention_site(".v", OpKind::kMatMul), store, ctx ? &ctx->mix : nullptr);
  const Tensor<T> merged = ops::permute(mixed, {0, 2, 1, 3}).reshape({b, n, d});
  return linear_forward(merged, p.w_proj, p.b_proj,
                        with_suffix(base, ".proj", OpKind::kMatMul, ActivationKind::kHidden), store,
                        ctx ? &ctx->proj : nullptr);
}

template <Real T>
AttentionGrads<T> mhsa_backward(AttentionContext<T>& ctx, const AttentionParams<T>& p, std::size_t heads,
                                const Tensor<T>& dy) {
  const std::size_t b = dy.dim(0);
  const std::size_t n = dy.dim(1);
  const std::size_t d = dy.dim(2);
  const std::size_t dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  AttentionGrads<T> g;
  LinearGrads<T> proj = linear_backward(ctx.proj, p.w_proj, dy);
  g.d.w_proj = std::move(proj.dw);
  g.d.b_proj = std::move(proj.db);

  const Tensor<T> dmixed = ops::permute(proj.dx.reshape({b, n, heads, dh}), {0, 2, 1, 3});
  auto [dprobs, dv] = matmul_backward(ctx.mix, dmixed);
  const Tensor<T> dscores = ops::scale(softmax_backward(ctx.probs, dprobs), scale);
  auto [dq, dkt] = matmul_backward(ctx.scores, dscores);
  const Tensor<T> dk = ops::transpose(dkt);

  const Tensor<T> dsplit = ops::permute(stack3(dq, dk, dv), {1, 3, 0, 2, 4}).reshape({b, n, 3 * d});
  LinearGrads<T> qkv = linear_backward(ctx.qkv, p.w_qkv, dsplit);
  g.d.w_qkv = std::move(qkv.dw);
  g.d.b_qkv = std::move(qkv.db);
  g.dx = std::move(qkv.dx);
  return g;
}

// ---------------------------------------------------------------------------
// Feed-forward

template <Real T>
Tensor<T> ffn_forward(const Tensor<T>& x, const FfnParams<T>& p, const std::string& prefix, ActivationStore* store,
                      FfnContext<T>* ctx) {
  const Site fc1{prefix + ".fc1", OpKind::kMatMul, Module::kFfn, ActivationKind::kHidden};
  const Site act{prefix + ".gelu", OpKind::kGelu, Module::kFfn, ActivationKind::kHidden};
  const Site fc2{prefix + ".fc2", OpKind::kMatMul, Module::kFfn, ActivationKind::kHidden};
  const Tensor<T> h = linear_forward(x, p.w1, p.b1, fc1, store, ctx ? &ctx->fc1 : nullptr);
  const Tensor<T> a = gelu_forward(h, act, store, ctx ? &ctx->act : nullptr);
  return linear_forward(a, p.w2, p.b2, fc2, store, ctx ? &ctx->fc2 : nullptr);
}

template <Real T>
FfnGrads<T> ffn_backward(FfnContext<T>& ctx, const FfnParams<T>& p, const Tensor<T>& dy) {
  FfnGrads<T> g;
  LinearGrads<T> fc2 = linear_backward(ctx.fc2, p.w2, dy);
  const Tensor<T> dh = gelu_backward(ctx.act, fc2.dx);
  LinearGrads<T> fc1 = linear_backward(ctx.fc1, p.w1, dh);
  g.d.w2 = std::move(fc2.dw);
  g.d.b2 = std::move(fc2.db);
  g.d.w1 = std::move(fc1.dw);
  g.d.b1 = std::move(fc1.db);
  g.dx = std::move(fc1.dx);
  return g;
}

#define QACT_INSTANTIATE_LAYERS(T)                                                                                \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Site&,           \
                                    ActivationStore*, LayerContext<T>*);                                          \
  template LinearGrads<T> linear_backward(LayerContext<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> matmul_forward(const Tensor<T>&, const Tensor<T>&, const Site&, const Site&,                \
                                    ActivationStore*, LayerContext<T>*);                                          \
  template std::pair<Tensor<T>, Tensor<T>> matmul_backward(LayerContext<T>&, const Tensor<T>&);                  \
  template Tensor<T> softmax_forward(const Tensor<T>&, const Site&, ActivationStore*, LayerContext<T>*);         \
  template Tensor<T> softmax_backward(LayerContext<T>&, const Tensor<T>&);                                       \
  template Tensor<T> layernorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Site&,        \
                                       ActivationStore*, LayerContext<T>*);                                       \
  template LayerNormGrads<T> layernorm_backward(LayerContext<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> gelu_forward(const Tensor<T>&, const Site&, ActivationStore*, LayerContext<T>*);            \
  template Tensor<T> gelu_backward(LayerContext<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mhsa_forward(const Tensor<T>&, const AttentionParams<T>&, std::size_t, const std::string&,  \
                                  ActivationStore*, AttentionContext<T>*);                                        \
  template AttentionGrads<T> mhsa_backward(AttentionContext<T>&, const AttentionParams<T>&, std::size_t,         \
                                           const Tensor<T>&);                                                     \
  template Tensor<T> ffn_forward(const Tensor<T>&, const FfnParams<T>&, const std::string&, ActivationStore*,     \
                                 FfnContext<T>*);                                                                 \
  template FfnGrads<T> ffn_backward(FfnContext<T>&, const FfnParams<T>&, const Tensor<T>&);

QACT_INSTANTIATE_LAYERS(float)
QACT_INSTANTIATE_LAYERS(double)

#undef QACT_INSTANTIATE_LAYERS

}  // namespace qact
