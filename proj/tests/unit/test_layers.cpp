// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "qact/error.hpp"
#include "qact/layers.hpp"
#include "qact/ops.hpp"
#include "support/oracles.hpp"

using namespace qact;
using qact::testing::as_doubles;
using qact::testing::finite_difference;
using qact::testing::random_tensor;
using qact::testing::relative_error;
using qact::testing::weighted_sum;

namespace {

constexpr double kLayerTol = 1e-6;

Site hidden(std::string id, OpKind op, Module m = Module::kMsa) {
  return Site{std::move(id), op, m, ActivationKind::kHidden};
}

Site attention(std::string id, OpKind op) { return Site{std::move(id), op, Module::kMsa, ActivationKind::kAttention}; }

ActivationStore exact_store(std::size_t heads = 2) { return ActivationStore(CompressionPolicy::none(), 0, heads); }

AttentionParams<double> attention_params(std::size_t d, std::uint64_t seed) {
  return {random_tensor<double>({d, 3 * d}, seed, -0.5, 0.5), random_tensor<double>({3 * d}, seed + 1, -0.1, 0.1),
          random_tensor<double>({d, d}, seed + 2, -0.5, 0.5), random_tensor<double>({d}, seed + 3, -0.1, 0.1)};
}

FfnParams<double> ffn_params(std::size_t d, std::size_t h, std::uint64_t seed) {
  return {random_tensor<double>({d, h}, seed, -0.5, 0.5), random_tensor<double>({h}, seed + 1, -0.1, 0.1),
          random_tensor<double>({h, d}, seed + 2, -0.5, 0.5), random_tensor<double>({d}, seed + 3, -0.1, 0.1)};
}

}  // namespace

TEST_SUITE("layers") {
  TEST_CASE("linear: identity weights pass the input through") {
    const TensorD x = random_tensor<double>({2, 3, 4}, 1);
    TensorD eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    const TensorD y = linear_forward<double>(x, eye, TensorD({4}), hidden("l", OpKind::kMatMul), nullptr, nullptr);
    CHECK(y == x);
  }

  TEST_CASE("linear gradients match finite differences") {
    TensorD x = random_tensor<double>({2, 3, 4}, 2);
    TensorD w = random_tensor<double>({4, 5}, 3);
    TensorD b = random_tensor<double>({5}, 4);
    const TensorD dy = random_tensor<double>({2, 3, 5}, 5);
    const Site site = hidden("l", OpKind::kMatMul);
    ActivationStore store = exact_store();
    LayerContext<double> ctx;
    linear_forward(x, w, b, site, &store, &ctx);
    const LinearGrads<double> g = linear_backward(ctx, w, dy);
    const auto loss = [&] { return weighted_sum(linear_forward<double>(x, w, b, site, nullptr, nullptr), dy); };
    CHECK(relative_error(finite_difference(x, loss), as_doubles(g.dx)) <= kLayerTol);
    CHECK(relative_error(finite_difference(w, loss), as_doubles(g.dw)) <= kLayerTol);
    CHECK(relative_error(finite_difference(b, loss), as_doubles(g.db)) <= kLayerTol);

    // dW = x^T dy, dx = dy W^T, db = sum dy, written out directly.
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (std::size_t r = 0; r < 6; ++r) acc += x[r * 4 + i] * dy[r * 5 + j];
        CHECK(g.dw[i * 5 + j] == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("matmul layer gradients for both operands") {
    TensorD a = random_tensor<double>({2, 2, 3, 4}, 6);
    TensorD bm = random_tensor<double>({2, 2, 4, 3}, 7);
    const TensorD dy = random_tensor<double>({2, 2, 3, 3}, 8);
    ActivationStore store = exact_store();
    LayerContext<double> ctx;
    const Site sa = attention("q", OpKind::kMatMul);
    const Site sb = attention("k", OpKind::kMatMul);
    matmul_forward(a, bm, sa, sb, &store, &ctx);
    auto [da, db] = matmul_backward(ctx, dy);
    const auto loss = [&] { return weighted_sum(ops::matmul(a, bm), dy); };
    CHECK(relative_error(finite_difference(a, loss), as_doubles(da)) <= kLayerTol);
    CHECK(relative_error(finite_difference(bm, loss), as_doubles(db)) <= kLayerTol);
  }

  TEST_CASE("softmax layer") {
    const Site site = attention("s", OpKind::kSoftmax);
    SUBCASE("uniform logits and constant upstream") {
      ActivationStore store = exact_store();
      LayerContext<double> ctx;
      const TensorD y = softmax_forward(TensorD::full({1, 2, 3, 4}, 0.7), site, &store, &ctx);
      for (double v : y.data()) CHECK(v == doctest::Approx(0.25));
      const TensorD dx = softmax_backward(ctx, TensorD::full({1, 2, 3, 4}, 3.0));
      for (double v : dx.data()) CHECK(std::abs(v) < 1e-15);
    }
    SUBCASE("gradient vs finite differences") {
      TensorD x = random_tensor<double>({2, 2, 3, 3}, 9, -2, 2);
      const TensorD dy = random_tensor<double>(x.shape(), 10);
      ActivationStore store = exact_store();
      LayerContext<double> ctx;
      softmax_forward(x, site, &store, &ctx);
      const TensorD dx = softmax_backward(ctx, dy);
      const auto loss = [&] { return weighted_sum(ops::softmax(x, 3), dy); };
      CHECK(relative_error(finite_difference(x, loss), as_doubles(dx)) <= kLayerTol);
    }
    SUBCASE("compressed probabilities reconstruct within one step") {
      CompressionPolicy policy;
      policy.softmax = true;
      ActivationStore store(policy, 3, 2);
      LayerContext<float> ctx;
      const TensorF x = random_tensor<float>({2, 2, 4, 4}, 11, -3, 3);
      const TensorF y = softmax_forward(x, site, &store, &ctx);
      const auto* c = ctx.get("output").compressed_value();
      REQUIRE(c != nullptr);
      const TensorF yhat = ctx.restore("output");
      const auto layout = QuantGroupLayout::head_wise(y.shape());
      for (std::size_t i = 0; i < y.numel(); ++i) {
        const float alpha = c->alpha_snapshot[layout.group_of(i)];
        CHECK(alpha <= 1.0f);
        CHECK(std::abs(yhat[i] - y[i]) <= alpha / 255.0f + 1e-7f);
      }
    }
  }

  TEST_CASE("layernorm layer") {
    const Site site = hidden("ln", OpKind::kLayerNorm);
    TensorD x = random_tensor<double>({2, 3, 6}, 12, -2, 2);
    TensorD gamma = random_tensor<double>({6}, 13, 0.5, 1.5);
    TensorD beta = random_tensor<double>({6}, 14);
    SUBCASE("dgamma under unit upstream is the column sum of normalized rows") {
      ActivationStore store = exact_store();
      LayerContext<double> ctx;
      layernorm_forward(x, gamma, beta, site, &store, &ctx);
      const LayerNormGrads<double> g = layernorm_backward(ctx, gamma, TensorD::full(x.shape(), 1.0));
      const TensorD norm = ops::layernorm(x, TensorD::full({6}, 1.0), TensorD({6}), kLayerNormEps);
      const TensorD expect = ops::sum_axis(norm.reshape({6, 6}), 0);
      for (std::size_t j = 0; j < 6; ++j) CHECK(g.dgamma[j] == doctest::Approx(expect[j]).epsilon(1e-12));
    }
    SUBCASE("gradient vs finite differences") {
      const TensorD dy = random_tensor<double>(x.shape(), 15);
      ActivationStore store = exact_store();
      LayerContext<double> ctx;
      layernorm_forward(x, gamma, beta, site, &store, &ctx);
      const LayerNormGrads<double> g = layernorm_backward(ctx, gamma, dy);
      const auto loss = [&] { return weighted_sum(ops::layernorm(x, gamma, beta, kLayerNormEps), dy); };
      CHECK(relative_error(finite_difference(x, loss), as_doubles(g.dx)) <= kLayerTol);
      CHECK(relative_error(finite_difference(gamma, loss), as_doubles(g.dgamma)) <= kLayerTol);
      CHECK(relative_error(finite_difference(beta, loss), as_doubles(g.dbeta)) <= kLayerTol);
    }
    SUBCASE("compressed dgamma stays within the propagated rounding bound") {
      const TensorF xf = x.cast<float>();
      const TensorF gf = gamma.cast<float>();
      const TensorF bf = beta.cast<float>();
      const TensorF dy = TensorF::full(xf.shape(), 1.0f);
      ActivationStore exact(CompressionPolicy::none(), 0, 2);
      LayerContext<float> ce;
      layernorm_forward(xf, gf, bf, site, &exact, &ce);
      const auto ge = layernorm_backward(ce, gf, dy);

      CompressionPolicy policy;
      policy.layernorm = true;
      ActivationStore comp(policy, 0, 2);
      LayerContext<float> cc;
      layernorm_forward(xf, gf, bf, site, &comp, &cc);
      const auto* c = cc.get("normalized").compressed_value();
      REQUIRE(c != nullptr);
      const auto gc = layernorm_backward(cc, gf, dy);
      float alpha = 0.0f;
      for (float a : c->alpha_snapshot) alpha = std::max(alpha, a);
      const double rows = 6.0;
      for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(gc.dgamma[j] - ge.dgamma[j]) <= rows * alpha / 255.0);
    }
  }

  TEST_CASE("gelu layer") {
    const Site site = hidden("g", OpKind::kGelu, Module::kFfn);
    ActivationStore store = exact_store();
    {
      LayerContext<double> ctx;
      gelu_forward(TensorD({2}, {0.0, -40.0}), site, &store, &ctx);
      const TensorD dx = gelu_backward(ctx, TensorD::full({2}, 1.0));
      CHECK(dx[0] == doctest::Approx(0.5));
      CHECK(std::abs(dx[1]) < 1e-12);
    }
    TensorD x = random_tensor<double>({3, 5}, 16, -3, 3);
    const TensorD dy = random_tensor<double>(x.shape(), 17);
    LayerContext<double> ctx;
    gelu_forward(x, site, &store, &ctx);
    const TensorD dx = gelu_backward(ctx, dy);
    const auto loss = [&] { return weighted_sum(ops::gelu(x), dy); };
    CHECK(relative_error(finite_difference(x, loss), as_doubles(dx)) <= kLayerTol);
  }

  TEST_CASE("multi-head attention") {
    const std::size_t d = 8;
    SUBCASE("single token reduces to the value path") {
      const AttentionParams<double> p = attention_params(d, 20);
      const TensorD x = random_tensor<double>({2, 1, d}, 21);
      const TensorD y = mhsa_forward<double>(x, p, 2, "m", nullptr, nullptr);
      for (std::size_t s = 0; s < 2; ++s) {
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j) {
          v[j] = p.b_qkv[2 * d + j];
          for (std::size_t i = 0; i < d; ++i) v[j] += x[s * d + i] * p.w_qkv[i * 3 * d + 2 * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          double o = p.b_proj[j];
          for (std::size_t i = 0; i < d; ++i) o += v[i] * p.w_proj[i * d + j];
          CHECK(y[s * d + j] == doctest::Approx(o).epsilon(1e-12));
        }
      }
    }
    SUBCASE("one head equals composing the primitive ops") {
      const AttentionParams<double> p = attention_params(d, 22);
      const TensorD x = random_tensor<double>({2, 5, d}, 23);
      const TensorD y = mhsa_forward<double>(x, p, 1, "m", nullptr, nullptr);
      const TensorD qkv = ops::add_bias(ops::matmul(x.reshape({10, d}), p.w_qkv), p.b_qkv);
      TensorD q({2, 5, d}), k({2, 5, d}), v({2, 5, d});
      for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          q[r * d + j] = qkv[r * 3 * d + j];
          k[r * d + j] = qkv[r * 3 * d + d + j];
          v[r * d + j] = qkv[r * 3 * d + 2 * d + j];
        }
      }
      const TensorD probs = ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), 1.0 / std::sqrt(double(d))), 2);
      const TensorD out = ops::add_bias(ops::matmul(ops::matmul(probs, v).reshape({10, d}), p.w_proj), p.b_proj);
      for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(out[i]).epsilon(1e-12));
    }
    SUBCASE("gradients match finite differences") {
      AttentionParams<double> p = attention_params(d, 24);
      TensorD x = random_tensor<double>({2, 4, d}, 25);
      const TensorD dy = random_tensor<double>({2, 4, d}, 26);
      ActivationStore store = exact_store(2);
      AttentionContext<double> ctx;
      mhsa_forward(x, p, 2, "m", &store, &ctx);
      const AttentionGrads<double> g = mhsa_backward(ctx, p, 2, dy);
      const auto loss = [&] { return weighted_sum(mhsa_forward<double>(x, p, 2, "m", nullptr, nullptr), dy); };
      CHECK(relative_error(finite_difference(x, loss), as_doubles(g.dx)) <= 1e-5);
      CHECK(relative_error(finite_difference(p.w_qkv, loss), as_doubles(g.d.w_qkv)) <= 1e-5);
      CHECK(relative_error(finite_difference(p.b_qkv, loss), as_doubles(g.d.b_qkv)) <= 1e-5);
      CHECK(relative_error(finite_difference(p.w_proj, loss), as_doubles(g.d.w_proj)) <= 1e-5);
      CHECK(relative_error(finite_difference(p.b_proj, loss), as_doubles(g.d.b_proj)) <= 1e-5);
    }
  }

  TEST_CASE("ffn gradients match finite differences") {
    FfnParams<double> p = ffn_params(6, 12, 30);
    TensorD x = random_tensor<double>({2, 3, 6}, 31);
    const TensorD dy = random_tensor<double>({2, 3, 6}, 32);
    ActivationStore store = exact_store(2);
    FfnContext<double> ctx;
    ffn_forward(x, p, "f", &store, &ctx);
    const FfnGrads<double> g = ffn_backward(ctx, p, dy);
    const auto loss = [&] { return weighted_sum(ffn_forward<double>(x, p, "f", nullptr, nullptr), dy); };
    CHECK(relative_error(finite_difference(x, loss), as_doubles(g.dx)) <= kLayerTol);
    CHECK(relative_error(finite_difference(p.w1, loss), as_doubles(g.d.w1)) <= kLayerTol);
    CHECK(relative_error(finite_difference(p.b1, loss), as_doubles(g.d.b1)) <= kLayerTol);
    CHECK(relative_error(finite_difference(p.w2, loss), as_doubles(g.d.w2)) <= kLayerTol);
    CHECK(relative_error(finite_difference(p.b2, loss), as_doubles(g.d.b2)) <= kLayerTol);
  }

  TEST_CASE("compression changes encodings, never the forward output or the saved tensor set") {
    const std::size_t d = 8;
    const AttentionParams<float> pa{random_tensor<float>({d, 3 * d}, 40), random_tensor<float>({3 * d}, 41),
                                    random_tensor<float>({d, d}, 42), random_tensor<float>({d}, 43)};
    const TensorF x = random_tensor<float>({2, 5, d}, 44, -2, 2);
    ActivationStore off(CompressionPolicy::none(), 1, 2);
    ActivationStore on(CompressionPolicy::all_ops(), 1, 2);
    AttentionContext<float> c_off, c_on;
    const TensorF y_off = mhsa_forward(x, pa, 2, "m", &off, &c_off);
    const TensorF y_on = mhsa_forward(x, pa, 2, "m", &on, &c_on);
    CHECK(y_off == y_on);

    const auto names = [](const LayerContext<float>& c) {
      std::vector<std::string> out;
      for (const auto& e : c.entries()) out.push_back(e.first);
      return out;
    };
    std::size_t compressed = 0;
    for (auto member : {&AttentionContext<float>::qkv, &AttentionContext<float>::scores,
                        &AttentionContext<float>::probs, &AttentionContext<float>::mix,
                        &AttentionContext<float>::proj}) {
      CHECK(names(c_off.*member) == names(c_on.*member));
      for (const auto& e : (c_on.*member).entries()) compressed += e.second.compressed() ? 1 : 0;
      for (const auto& e : (c_off.*member).entries()) CHECK(!e.second.compressed());
    }
    CHECK(compressed == 7);
  }

  TEST_CASE("contexts are single use") {
    ActivationStore store = exact_store();
    LayerContext<double> ctx;
    const TensorD w = random_tensor<double>({3, 3}, 50);
    linear_forward(random_tensor<double>({2, 3}, 51), w, TensorD({3}), hidden("l", OpKind::kMatMul), &store, &ctx);
    linear_backward(ctx, w, TensorD::full({2, 3}, 1.0));
    CHECK(ctx.consumed());
    CHECK_THROWS_AS(linear_backward(ctx, w, TensorD::full({2, 3}, 1.0)), ContractError);
  }

  TEST_CASE("modules outside the policy are stored exactly") {
    CompressionPolicy policy = CompressionPolicy::all_ops();
    policy.msa = false;
    ActivationStore store(policy, 0, 2);
    LayerContext<float> a, f;
    const TensorF x = random_tensor<float>({2, 4}, 60);
    gelu_forward(x, hidden("a", OpKind::kGelu, Module::kMsa), &store, &a);
    gelu_forward(x, hidden("f", OpKind::kGelu, Module::kFfn), &store, &f);
    CHECK(!a.entries().front().second.compressed());
    CHECK(f.entries().front().second.compressed());
    LayerContext<float> none;
    gelu_forward(x, hidden("n", OpKind::kGelu, Module::kNone), &store, &none);
    CHECK(!none.entries().front().second.compressed());
  }
}
