// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the acceptance criteria in order and prints one PASS/FAIL line each.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "qact/cli.hpp"
#include "qact/model.hpp"
#include "qact/quantizer.hpp"
#include "qact/simd/kernels.hpp"
#include "qact/tasks.hpp"
#include "qact/trainer.hpp"
#include "support/oracles.hpp"

using namespace qact;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool bit_identical(const TensorF& a, const TensorF& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

ModelConfig reference_model() {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.dim = 32;
  cfg.heads = 4;
  cfg.seq_len = 16;
  return cfg;
}

// Forward with compression on and off over random configurations.
Outcome forward_exactness() {
  Rng rng = Rng::for_stream(101, "acceptance.forward");
  const std::size_t dims[] = {16, 24, 32};
  const std::size_t heads[] = {2, 4};
  std::size_t mismatches = 0;
  std::size_t compared = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg;
    cfg.depth = 1 + rng.next_u64() % 2;
    cfg.heads = heads[rng.next_u64() % 2];
    cfg.dim = dims[rng.next_u64() % 3];
    if (cfg.dim % cfg.heads != 0) cfg.dim = 32;
    cfg.seq_len = 8 + 4 * (rng.next_u64() % 3);
    const std::uint64_t seed = rng.next_u64();

    CompressionPolicy p;
    p.matmul = rng.bernoulli(0.7);
    p.softmax = rng.bernoulli(0.7);
    p.layernorm = rng.bernoulli(0.7);
    p.gelu = rng.bernoulli(0.7);
    p.msa = rng.bernoulli(0.8);
    p.ffn = rng.bernoulli(0.8);
    switch (rng.next_u64() % 3) {
      case 0: p.granularity = {Granularity::Kind::kHead, 0}; break;
      case 1: p.granularity = {Granularity::Kind::kLayer, 0}; break;
      default: p.granularity = {Granularity::Kind::kChannel, cfg.heads}; break;
    }
    p.rounding = rng.bernoulli(0.5) ? Rounding::kStochastic : Rounding::kNearest;
    p.scheme = rng.bernoulli(0.3) ? QuantScheme::kSymmetric : QuantScheme::kAsymmetric;
    p.stats = p.scheme == QuantScheme::kAsymmetric && rng.bernoulli(0.3) ? StatsMode::kPerSample
                                                                           : StatsMode::kRunningEstimate;

    const ModelParams<float> params = init_model(cfg, seed);
    const SyntheticTask task(rng.bernoulli(0.5) ? TaskKind::kMarkerDetection : TaskKind::kMajorityToken, cfg.seq_len,
                             cfg.vocab, seed);
    ActivationStore on(p, seed, cfg.heads);
    ActivationStore off(CompressionPolicy::none(), seed, cfg.heads);
    // Two batches so the second forward sees running estimates already set.
    for (std::uint64_t step = 0; step < 2; ++step) {
      const Batch batch = task.train_batch(step, 1 + rng.next_u64() % 8);
      ModelContext<float> ctx_on, ctx_off;
      const TensorF a = model_forward(params, cfg, batch, &on, &ctx_on);
      const TensorF b = model_forward(params, cfg, batch, &off, &ctx_off);
      const TensorF c = model_forward<float>(params, cfg, batch, nullptr, nullptr);
      ++compared;
      if (!bit_identical(a, b) || !bit_identical(a, c)) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%zu/%zu forward passes bit-identical", compared - mismatches, compared)};
}

// Every parameter gradient of the 2-block model against central differences.
Outcome gradient_correctness() {
  const ModelConfig cfg = reference_model();
  ModelParams<double> p = init_model(cfg, 7).cast<double>();
  const SyntheticTask task(TaskKind::kMarkerDetection, cfg.seq_len, cfg.vocab, 7);
  const Batch batch = task.train_batch(0, 4);

  ActivationStore store(CompressionPolicy::none(), 7, cfg.heads);
  ModelContext<double> ctx;
  const TensorD logits = model_forward(p, cfg, batch, &store, &ctx);
  const ModelParams<double> grads = model_backward(p, cfg, ctx, cross_entropy(logits, batch.labels).dlogits);
  const auto analytic = testing::flatten(grads);
  const auto loss = [&] {
    return cross_entropy(model_forward<double>(p, cfg, batch, nullptr, nullptr), batch.labels).loss;
  };

  double worst = 0.0;
  std::string worst_name;
  std::size_t failing = 0, tensors = 0, entries = 0;
  std::size_t i = 0;
  p.visit([&](const std::string& name, TensorD& t, bool) {
    const double err = testing::relative_error(testing::finite_difference(t, loss), analytic[i++].second);
    entries += t.numel();
    ++tensors;
    if (err > 1e-5) ++failing;
    if (err >= worst) {
      worst = err;
      worst_name = name;
    }
  });
  return {failing == 0, fmt("%zu tensors (%zu entries), worst relative error %.3g at %s", tensors, entries, worst,
                            worst_name.c_str())};
}

// Cosine similarity between compressed and exact gradients.
Outcome gradient_fidelity() {
  const ModelConfig cfg = reference_model();
  std::size_t good = 0, total = 0;
  double lowest = 1.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ModelParams<float> p = init_model(cfg, seed);
    const SyntheticTask task(TaskKind::kMarkerDetection, cfg.seq_len, cfg.vocab, seed);
    CompressionPolicy policy = CompressionPolicy::all_ops();
    policy.granularity = {Granularity::Kind::kHead, 0};
    policy.rounding = Rounding::kStochastic;
    ActivationStore compressed(policy, seed, cfg.heads);
    // Warm the running estimates on earlier batches.
    for (std::uint64_t step = 0; step < 5; ++step) {
      ModelContext<float> warm;
      model_forward(p, cfg, task.train_batch(step, 4), &compressed, &warm);
    }
    const Batch batch = task.train_batch(5, 4);
    const auto grads = [&](ActivationStore& store) {
      ModelContext<float> ctx;
      const TensorF logits = model_forward(p, cfg, batch, &store, &ctx);
      return testing::flatten(model_backward(p, cfg, ctx, cross_entropy(logits, batch.labels).dlogits));
    };
    ActivationStore exact(CompressionPolicy::none(), seed, cfg.heads);
    const auto g_exact = grads(exact);
    const auto g_comp = grads(compressed);
    for (std::size_t i = 0; i < g_exact.size(); ++i) {
      const double c = testing::cosine(g_exact[i].second, g_comp[i].second);
      lowest = std::min(lowest, c);
      ++total;
      if (c >= 0.99) ++good;
    }
  }
  const double frac = static_cast<double>(good) / static_cast<double>(total);
  return {frac >= 0.95, fmt("%zu/%zu tensors with cosine >= 0.99 (%.1f%%), lowest %.5f", good, total, 100 * frac,
                            lowest)};
}

// Round-up frequency of stochastic rounding through both code paths.
Outcome stochastic_unbiasedness() {
  constexpr std::size_t kDraws = 100000;
  bool pass = true;
  std::string detail;
  double worst_z = 0.0;
  for (const float x : {0.1f, 0.3f, 0.5f, 0.7f, 0.9f}) {
    const double p = x;
    const double tol = 4.0 * std::sqrt(p * (1 - p) / kDraws);

    Rng rng = Rng::for_stream(2, "acceptance.sr", static_cast<std::uint64_t>(x * 10));
    const TensorF rounded = stochastic_round(TensorF({kDraws}, std::vector<float>(kDraws, x)), rng);
    std::size_t up = 0;
    for (float v : rounded.data()) up += v == 1.0f;
    const double freq = static_cast<double>(up) / kDraws;

    // Encoder path: alpha 255, beta 0 makes the code equal to the rounded value.
    QuantizerState s;
    s.alpha = {255.0f};
    s.beta = {0.0f};
    s.initialized = true;
    s.rounding = Rounding::kStochastic;
    const TensorF xs({1, kDraws}, std::vector<float>(kDraws, x));
    Rng krng = Rng::for_stream(3, "acceptance.sr", static_cast<std::uint64_t>(x * 10));
    const CompressedActivation c = quantize(xs, s, QuantGroupLayout::layer_wise(xs.shape()), krng);
    std::size_t kup = 0;
    for (std::uint8_t code : c.payload) kup += code == 1;
    const double kfreq = static_cast<double>(kup) / kDraws;

    pass = pass && std::abs(freq - p) <= tol && std::abs(kfreq - p) <= tol;
    worst_z = std::max({worst_z, std::abs(freq - p) / (tol / 4), std::abs(kfreq - p) / (tol / 4)});
    detail += fmt("x=%.1f: %.4f/%.4f ", p, freq, kfreq);
  }
  return {pass, detail + fmt("(max |z| %.2f, bound 4)", worst_z)};
}

// Dense grid inside each group's clipping range.
Outcome round_trip_bounds() {
  constexpr std::size_t kPoints = 10000;
  const std::vector<std::pair<float, float>> groups = {{-1.0f, 2.0f}, {0.25f, 0.5f}, {-1.9f, 0.1f}, {0.0f, 1.5f}};
  const std::size_t g_count = groups.size();
  std::vector<float> values(g_count * kPoints);
  QuantizerState s;
  for (std::size_t g = 0; g < g_count; ++g) {
    const auto [beta, alpha] = groups[g];
    s.beta.push_back(beta);
    s.alpha.push_back(alpha);
    for (std::size_t i = 0; i < kPoints; ++i) {
      const double v = beta + static_cast<double>(alpha) * static_cast<double>(i) / (kPoints - 1);
      values[g * kPoints + i] = std::clamp(static_cast<float>(v), beta, beta + alpha);
    }
  }
  s.initialized = true;
  const TensorF x({1, g_count, kPoints}, values);
  const QuantGroupLayout layout = QuantGroupLayout::head_wise(x.shape());

  bool pass = true;
  std::string detail;
  for (Rounding r : {Rounding::kNearest, Rounding::kStochastic}) {
    s.rounding = r;
    Rng rng = Rng::for_stream(5, "acceptance.roundtrip");
    const TensorF y = dequantize(quantize(x, s, layout, rng));
    double worst_ratio = 0.0;
    std::size_t violations = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double alpha = groups[i / kPoints].second;
      const double bound = (r == Rounding::kNearest ? alpha / 510.0 : alpha / 255.0) + 1e-7;
      const double err = std::abs(static_cast<double>(y[i]) - static_cast<double>(x[i]));
      if (err > bound) ++violations;
      worst_ratio = std::max(worst_ratio, err / bound);
    }
    pass = pass && violations == 0;
    detail += fmt("%s: %zu violations, max err/bound %.4f; ", std::string(to_string(r)).c_str(), violations,
                  worst_ratio);
  }
  return {pass, detail + fmt("%zu groups x %zu points", g_count, kPoints)};
}

// Running estimates against a scalar recomputation of the update rule.
Outcome running_estimates() {
  const Shape shape = {4, 3, 8, 8};
  const QuantGroupLayout layout = QuantGroupLayout::head_wise(shape);
  const std::size_t groups = 3;
  const std::size_t per_group = 64;
  QuantizerState init;
  init.lambda = 0.9f;
  Quantizer q(init, Rng::for_stream(6, "acceptance.running"));

  std::vector<float> alpha(groups), beta(groups);
  bool first = true;
  std::size_t mismatches = 0;
  Rng data = Rng::for_stream(6, "acceptance.running.data");
  for (int t = 0; t < 100; ++t) {
    TensorF x(shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const std::size_t h = (i / per_group) % groups;
      x[i] = static_cast<float>(data.normal() * (0.5 + h) + 0.05 * t * (static_cast<double>(h) - 1.0));
    }
    q.compress(x, layout);

    for (std::size_t h = 0; h < groups; ++h) {
      float mn = std::numeric_limits<float>::infinity();
      float mx = -mn;
      for (std::size_t b = 0; b < shape[0]; ++b) {
        for (std::size_t i = 0; i < per_group; ++i) {
          const float v = x[(b * groups + h) * per_group + i];
          mn = std::min(mn, v);
          mx = std::max(mx, v);
        }
      }
      if (first) {
        alpha[h] = mx - mn;
        beta[h] = mn;
      } else {
        const float lambda = 0.9f;
        const float keep = 1.0f - lambda;
        alpha[h] = lambda * alpha[h] + keep * (mx - mn);
        beta[h] = lambda * beta[h] + keep * mn;
      }
      alpha[h] = std::max(alpha[h], 1e-8f);
      if (alpha[h] != q.state().alpha[h] || beta[h] != q.state().beta[h]) ++mismatches;
    }
    first = false;
  }
  return {mismatches == 0, fmt("100 batches x %zu groups, %zu mismatching values; final alpha %.6g %.6g %.6g", groups,
                               mismatches, alpha[0], alpha[1], alpha[2])};
}

double quantization_mse(const TensorF& x, const QuantGroupLayout& layout, std::uint64_t seed) {
  QuantizerState s;
  init_params(s, x, layout);
  Rng rng = Rng::for_stream(seed, "acceptance.granularity.rounding");
  const TensorF y = dequantize(quantize(x, s, layout, rng));
  double acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += std::pow(double(y[i]) - double(x[i]), 2);
  return acc / static_cast<double>(x.numel());
}

// Head-wise against layer-wise quantization on separated head distributions.
Outcome granularity() {
  std::size_t wins = 0;
  double ratio_sum = 0;
  const std::vector<double> means = {-3.0, 0.0, 3.0};
  const std::vector<double> scales = {0.1, 0.1, 0.1};
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const TensorF x = generate_heterogeneous_heads(4, 3, 16, 8, means, scales, trial);
    const double head = quantization_mse(x, QuantGroupLayout::head_wise(x.shape()), trial);
    const double layer = quantization_mse(x, QuantGroupLayout::layer_wise(x.shape()), trial);
    if (head < layer) ++wins;
    ratio_sum += head / layer;
  }
  return {wins == 100, fmt("head-wise lower in %zu/100 trials, mean MSE ratio %.4f", wins, ratio_sum / 100)};
}

LedgerReport measure(const ModelConfig& cfg, const CompressionPolicy& policy, MemoryLedger& ledger) {
  const ModelParams<float> p = init_model(cfg, 1);
  const SyntheticTask task(TaskKind::kMarkerDetection, cfg.seq_len, cfg.vocab, 1);
  ActivationStore store(policy, 1, cfg.heads, &ledger);
  ledger.begin_step(0);
  ModelContext<float> ctx;
  model_forward(p, cfg, task.train_batch(0, 8), &store, &ctx);
  return ledger.report();
}

// Byte-exact ledger on the reference model with batch 8.
Outcome memory_accounting() {
  const ModelConfig cfg;
  CompressionPolicy all = CompressionPolicy::all_ops();
  all.granularity = {Granularity::Kind::kHead, 0};
  MemoryLedger ledger;
  const LedgerReport r_all = measure(cfg, all, ledger);
  const std::size_t g = cfg.heads;

  std::size_t exact_records = 0, bad = 0, compressed = 0;
  for (const LedgerRecord& rec : ledger.records()) {
    const StoredBytes& b = rec.bytes;
    if (b.baseline_bytes != b.elements * 4) ++bad;
    if (b.compressed) {
      ++compressed;
      if (b.actual_bytes != b.elements * 1 + 2 * g * 4 || b.quant_param_bytes != 2 * g * 4) ++bad;
    } else {
      ++exact_records;
      if (b.actual_bytes != b.elements * 4) ++bad;
    }
  }

  MemoryLedger none_ledger;
  const LedgerReport r_none = measure(cfg, CompressionPolicy::none(), none_ledger);
  bool rows_ok = r_none.baseline_bytes == r_all.baseline_bytes && r_none.actual_bytes == r_none.baseline_bytes;
  std::size_t saved_sum = 0;
  std::string rows;
  for (OpKind op : kAllOpKinds) {
    CompressionPolicy single = all;
    for (OpKind o : kAllOpKinds) single.set_op(o, o == op);
    MemoryLedger l;
    const LedgerReport r = measure(cfg, single, l);
    const std::size_t saved = r.baseline_bytes - r.actual_bytes;
    rows_ok = rows_ok && r.baseline_bytes == r_all.baseline_bytes && saved > 0 && r.reduction_ratio > 0;
    // The single-op row's savings all land in that op's ledger row.
    const OpRow& row = r.per_op[static_cast<std::size_t>(op)];
    rows_ok = rows_ok && row.baseline_bytes - row.actual_bytes == saved;
    saved_sum += saved;
    rows += fmt("%s %.4f ", std::string(to_string(op)).c_str(), r.reduction_ratio);
  }
  rows_ok = rows_ok && saved_sum == r_all.baseline_bytes - r_all.actual_bytes;

  std::size_t per_op_base = 0, per_op_actual = 0;
  for (const OpRow& row : r_all.per_op) {
    per_op_base += row.baseline_bytes;
    per_op_actual += row.actual_bytes;
  }
  rows_ok = rows_ok && per_op_base == r_all.baseline_bytes && per_op_actual == r_all.actual_bytes;

  const bool pass = bad == 0 && compressed > 0 && r_all.reduction_ratio >= 0.60 && rows_ok;
  return {pass, fmt("%zu compressed + %zu exact records, %zu byte mismatches; all-ops reduction %.4f "
                    "(%zu -> %zu B); single-op rows: %s; rows consistent: %s",
                    compressed, exact_records, bad, r_all.reduction_ratio, r_all.baseline_bytes,
                    r_all.actual_bytes, rows.c_str(), rows_ok ? "yes" : "no")};
}

int run_cli(const std::vector<std::string>& args, std::ostream& log) {
  return cli::run(cli::parse_args(args, std::nullopt), log);
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// 2000-step training runs with and without compression over three seeds.
Outcome training_parity(const fs::path& out, std::ostream& log) {
  const std::vector<std::string> common = {"train", "--task", "marker", "--depth", "2", "--steps", "2000",
                                           "--seeds", "1,2,3", "--log-every", "100"};
  double mean[2] = {0, 0};
  std::string detail;
  int codes[2] = {0, 0};
  const char* names[2] = {"none", "all"};
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<std::string> args = common;
    args.insert(args.end(), {"--compress", names[arm], "--out", (out / names[arm]).string()});
    codes[arm] = run_cli(args, log);
    for (int seed = 1; seed <= 3; ++seed) {
      const json s = read_json(out / names[arm] / ("seed-" + std::to_string(seed)) / "summary.json");
      mean[arm] += s.at("report").at("eval_accuracy").get<double>() / 3.0;
    }
  }
  const bool pass = codes[0] == 0 && codes[1] == 0 && mean[0] >= 0.95 && std::abs(mean[0] - mean[1]) <= 0.02;
  return {pass, fmt("mean eval accuracy baseline %.4f, all-ops %.4f, |diff| %.4f (exit %d/%d)", mean[0], mean[1],
                    std::abs(mean[0] - mean[1]), codes[0], codes[1])};
}

// Ablation sweeps over ops and modules complete with the expected ordering.
Outcome ablation_sweeps(const fs::path& out, std::ostream& log) {
  std::string detail;
  bool pass = true;
  for (const char* axis : {"compress-op", "compress-module"}) {
    const fs::path dir = out / axis;
    const int code = run_cli({"sweep", "--axis", axis, "--out", dir.string()}, log);
    const json sweep = read_json(dir / "sweep.json");
    std::map<std::string, double> red;
    for (const json& row : sweep.at("rows")) red[row.at("name")] = row.at("reduction_ratio").get<double>();
    const std::string full = std::string(axis) == "compress-op" ? "all" : "msa+ffn";
    bool ordered = red.at("none") == 0.0;
    for (const auto& [name, r] : red) {
      if (name == "none" || name == full) continue;
      ordered = ordered && red.at(full) > r && r > red.at("none");
    }
    pass = pass && code == 0 && ordered && sweep.at("rows").size() == (full == "all" ? 6u : 4u);
    detail += fmt("%s: exit %d, %zu rows, ordered %s (", axis, code, red.size(), ordered ? "yes" : "no");
    for (const json& row : sweep.at("rows")) {
      detail += fmt("%s %.3f ", row.at("name").get<std::string>().c_str(), row.at("reduction_ratio").get<double>());
    }
    detail += ") ";
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance suite");
  std::string out = "acceptance-out";
  std::vector<int> only;
  app.add_option("--out", out, "Directory for training and sweep artifacts");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path out_dir(out);
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "runs.log");

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"forward exactness", forward_exactness},
      {"exact-path gradient correctness", gradient_correctness},
      {"gradient fidelity under compression", gradient_fidelity},
      {"stochastic rounding unbiasedness", stochastic_unbiasedness},
      {"round-trip bounds", round_trip_bounds},
      {"running-estimate arithmetic", running_estimates},
      {"head-wise vs layer-wise granularity", granularity},
      {"memory accounting", memory_accounting},
      {"training parity", [&] { return training_parity(out_dir / "parity", log); }},
      {"ablation sweeps", [&] { return ablation_sweeps(out_dir / "sweeps", log); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d %-38s %s  [%.1fs] %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
