// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "qact/error.hpp"
#include "qact/quantizer.hpp"
#include "qact/simd/kernels.hpp"
#include "qact/tasks.hpp"

namespace qact::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Command c) {
  switch (c) {
    case Command::kTrain:
      return "train";
    case Command::kSweep:
      return "sweep";
    case Command::kMicrobench:
      return "microbench";
    case Command::kReport:
      return "report";
  }
  return "?";
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kCompressOp:
      return "compress-op";
    case SweepAxis::kCompressModule:
      return "compress-module";
    case SweepAxis::kGranularity:
      return "granularity";
  }
  return "?";
}

namespace {

struct OptionDoc {
  const char* key;
  const char* help;
};

constexpr OptionDoc kOptionDocs[] = {
    {"compress", "Ops to compress: comma list of matmul,softmax,layernorm,gelu, or all, or none"},
    {"modules", "Modules to compress: msa,ffn or none (default both)"},
    {"granularity", "Quantizer grouping: head, layer or channel:G (default head)"},
    {"rounding", "stochastic or nearest (default stochastic)"},
    {"stats", "running or per-sample (default running)"},
    {"scheme", "asymmetric or symmetric (default asymmetric)"},
    {"lambda", "Running-estimate decay in [0, 1) (default 0.9)"},
    {"seed", "Run seed (default 0, or MESA_SEED)"},
    {"seeds", "Comma list of seeds to replicate over"},
    {"steps", "Training steps (default 2000)"},
    {"batch", "Batch size (default 32)"},
    {"lr", "Peak learning rate (default 1e-3)"},
    {"wd", "AdamW weight decay (default 0.05)"},
    {"depth", "Transformer blocks (default 2)"},
    {"dim", "Model width (default 32)"},
    {"heads", "Attention heads (default 4)"},
    {"seq-len", "Tokens per sample (default 16)"},
    {"mlp-ratio", "FFN hidden width multiplier (default 4)"},
    {"classes", "Output classes (default 2)"},
    {"vocab", "Vocabulary size (default 16)"},
    {"task", "marker or majority (default marker)"},
    {"precision", "standard (float32) or oracle (float64)"},
    {"out", "Output directory (default qact-out)"},
    {"log-every", "Metrics logging interval in steps (default 10)"},
    {"trajectory-stride", "Alpha/beta trajectory interval in steps (default 10)"},
    {"eval-samples", "Held-out evaluation samples (default 4096)"},
    {"jobs", "Parallel runs for seeds and sweep rows (default 1)"},
    {"axis", "Sweep axis: compress-op, compress-module or granularity"},
    {"save-checkpoint", "Write a checkpoint file when the run stops"},
    {"resume", "Continue from a checkpoint file"},
    {"stop-after", "Stop a train run after this many steps"},
    {"debug-exact-backward", "true to quantize and account but backprop exact copies"},
    {"bench-elements", "Microbench tensor size (default 65536)"},
    {"bench-iters", "Microbench timing iterations (default 20)"},
};

const char* option_help(const std::string& key) {
  for (const OptionDoc& d : kOptionDocs) {
    if (key == d.key) return d.help;
  }
  return "";
}

}  // namespace

const std::vector<std::string>& option_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const OptionDoc& d : kOptionDocs) out.emplace_back(d.key);
    return out;
  }();
  return keys;
}

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    std::string part(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    part.erase(0, part.find_first_not_of(' '));
    part.erase(part.find_last_not_of(' ') + 1);
    if (!part.empty()) out.push_back(part);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string setting_text(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) {
    std::ostringstream os;
    os << std::setprecision(17) << v.get<double>();
    return os.str();
  }
  if (v.is_array()) {
    std::string joined;
    for (const json& e : v) {
      if (!joined.empty()) joined += ',';
      joined += setting_text(key, e);
    }
    return joined;
  }
  throw UsageError("config key '" + key + "' has an unsupported value type");
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw UsageError("--" + key + " expects a non-negative integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
    throw UsageError("--" + key + " expects a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw UsageError("--" + key + " expects true or false, got '" + text + "'");
}

template <typename E>
E parse_enum(const std::string& key, const std::string& text, std::optional<E> v) {
  if (!v) throw UsageError("--" + key + ": unrecognized value '" + text + "'");
  return *v;
}

void apply_ops(CompressionPolicy& p, const std::string& text) {
  for (OpKind op : kAllOpKinds) p.set_op(op, false);
  if (text == "none") return;
  if (text == "all") {
    for (OpKind op : kAllOpKinds) p.set_op(op, true);
    return;
  }
  for (const std::string& name : split(text, ',')) p.set_op(parse_enum("compress", name, parse_op(name)), true);
}

void apply_modules(CompressionPolicy& p, const std::string& text) {
  p.msa = p.ffn = false;
  if (text == "none") return;
  for (const std::string& name : split(text, ',')) {
    if (name == "msa") {
      p.msa = true;
    } else if (name == "ffn") {
      p.ffn = true;
    } else {
      throw UsageError("--modules: unrecognized module '" + name + "' (expected msa, ffn or none)");
    }
  }
}

std::optional<SweepAxis> parse_axis(std::string_view s) {
  if (s == "compress-op") return SweepAxis::kCompressOp;
  if (s == "compress-module") return SweepAxis::kCompressModule;
  if (s == "granularity") return SweepAxis::kGranularity;
  return std::nullopt;
}

std::optional<Command> parse_command(std::string_view s) {
  for (Command c : {Command::kTrain, Command::kSweep, Command::kMicrobench, Command::kReport}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

void apply_setting(RunSpec& spec, const std::string& key, const std::string& v) {
  CompressionPolicy& p = spec.train.policy;
  if (key == "compress") {
    apply_ops(p, v);
  } else if (key == "modules") {
    apply_modules(p, v);
  } else if (key == "granularity") {
    p.granularity = parse_enum(key, v, parse_granularity(v));
  } else if (key == "rounding") {
    p.rounding = parse_enum(key, v, parse_rounding(v));
  } else if (key == "stats") {
    p.stats = parse_enum(key, v, parse_stats(v));
  } else if (key == "scheme") {
    p.scheme = parse_enum(key, v, parse_scheme(v));
  } else if (key == "lambda") {
    p.lambda = static_cast<float>(parse_double(key, v));
  } else if (key == "debug-exact-backward") {
    p.debug_exact_backward = parse_bool(key, v);
  } else if (key == "seed") {
    spec.train.seed = parse_u64(key, v);
  } else if (key == "seeds") {
    spec.seeds.clear();
    for (const std::string& s : split(v, ',')) spec.seeds.push_back(parse_u64(key, s));
    if (spec.seeds.empty()) throw UsageError("--seeds needs at least one seed");
  } else if (key == "steps") {
    spec.train.steps = parse_u64(key, v);
  } else if (key == "batch") {
    spec.train.batch_size = parse_u64(key, v);
  } else if (key == "lr") {
    spec.train.lr = parse_double(key, v);
  } else if (key == "wd") {
    spec.train.weight_decay = parse_double(key, v);
  } else if (key == "depth") {
    spec.model.depth = parse_u64(key, v);
  } else if (key == "dim") {
    spec.model.dim = parse_u64(key, v);
  } else if (key == "heads") {
    spec.model.heads = parse_u64(key, v);
  } else if (key == "seq-len") {
    spec.model.seq_len = parse_u64(key, v);
  } else if (key == "mlp-ratio") {
    spec.model.mlp_ratio = parse_u64(key, v);
  } else if (key == "classes") {
    spec.model.num_classes = parse_u64(key, v);
  } else if (key == "vocab") {
    spec.model.vocab = parse_u64(key, v);
  } else if (key == "task") {
    spec.train.task = parse_enum(key, v, parse_task(v));
  } else if (key == "precision") {
    if (v == "standard") {
      spec.train.precision = Precision::kStandard;
    } else if (v == "oracle") {
      spec.train.precision = Precision::kOracle;
    } else {
      throw UsageError("--precision: expected standard or oracle, got '" + v + "'");
    }
  } else if (key == "out") {
    if (v.empty()) throw UsageError("--out needs a directory");
    spec.out_dir = v;
  } else if (key == "log-every") {
    spec.train.log_every = parse_u64(key, v);
  } else if (key == "trajectory-stride") {
    spec.train.trajectory_stride = parse_u64(key, v);
  } else if (key == "eval-samples") {
    spec.train.eval_samples = parse_u64(key, v);
  } else if (key == "jobs") {
    spec.jobs = parse_u64(key, v);
  } else if (key == "axis") {
    spec.axis = parse_enum(key, v, parse_axis(v));
  } else if (key == "save-checkpoint") {
    spec.save_checkpoint = v;
  } else if (key == "resume") {
    spec.resume = v;
  } else if (key == "stop-after") {
    spec.stop_after = parse_u64(key, v);
  } else if (key == "bench-elements") {
    spec.bench.elements = parse_u64(key, v);
  } else if (key == "bench-iters") {
    spec.bench.iterations = parse_u64(key, v);
  } else {
    throw UsageError("unknown option '" + key + "'");
  }
}

struct ParsedFlags {
  std::string command;
  std::string config;
  std::map<std::string, std::string> values;
};

// Builds the CLI11 parser. Every setting is captured as text so flags and
// config-file values share one validation path.
std::unique_ptr<CLI::App> make_app(ParsedFlags& flags) {
  auto app = std::make_unique<CLI::App>("Activation-compressed transformer training experiments", "qact");
  app->add_option("command", flags.command, "train | sweep | microbench | report")->required();
  app->add_option("--config", flags.config, "JSON file with the same keys as the flags (flags win)");
  for (const std::string& key : option_keys()) app->add_option("--" + key, flags.values[key], option_help(key));
  return app;
}

void validate(RunSpec& spec) {
  try {
    spec.model.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (spec.seeds.empty()) spec.seeds = {spec.train.seed};
  spec.train.seed = spec.seeds.front();
  spec.train.validate();
  const Granularity& g = spec.train.policy.granularity;
  if (g.kind == Granularity::Kind::kChannel && g.channel_groups > spec.model.dim) {
    throw UsageError("channel groups exceed model dim");
  }
  if (spec.train.task == TaskKind::kMajorityToken && spec.model.vocab < 3) {
    throw UsageError("majority task needs a vocabulary of at least 3 tokens");
  }
  if (spec.jobs == 0) throw UsageError("--jobs must be positive");
  if (spec.bench.elements == 0 || spec.bench.iterations == 0) {
    throw UsageError("microbench sizes must be positive");
  }
  const bool checkpointing = spec.save_checkpoint || spec.resume || spec.stop_after;
  if (checkpointing && (spec.command != Command::kTrain || spec.seeds.size() != 1)) {
    throw UsageError("checkpoint options need the train command with a single seed");
  }
  if (spec.stop_after && (*spec.stop_after == 0 || *spec.stop_after > spec.train.steps)) {
    throw UsageError("--stop-after must lie in [1, steps]");
  }
}

}  // namespace

json RunSpec::to_json() const {
  json j = {{"command", std::string(cli::to_string(command))},
            {"model", qact::to_json(model)},
            {"train", qact::to_json(train)},
            {"seeds", seeds},
            {"out", out_dir},
            {"axis", std::string(cli::to_string(axis))},
            {"jobs", jobs},
            {"bench", {{"elements", bench.elements}, {"iterations", bench.iterations}}}};
  j["save_checkpoint"] = save_checkpoint ? json(*save_checkpoint) : json(nullptr);
  j["resume"] = resume ? json(*resume) : json(nullptr);
  j["stop_after"] = stop_after ? json(*stop_after) : json(nullptr);
  return j;
}

RunSpec parse_args(const std::vector<std::string>& args, std::optional<std::string> env_seed) {
  ParsedFlags flags;
  auto app = make_app(flags);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app->parse(reversed);
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  RunSpec spec;
  spec.command = parse_enum("command", flags.command, parse_command(flags.command));
  if (env_seed && !env_seed->empty()) spec.train.seed = parse_u64("seed (MESA_SEED)", *env_seed);

  if (!flags.config.empty()) {
    std::ifstream in(flags.config);
    if (!in) throw UsageError("cannot read config file " + flags.config);
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("config file " + flags.config + ": " + e.what());
    }
    if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
    const auto& keys = option_keys();
    for (const auto& item : cfg.items()) {
      if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
        throw UsageError("unknown config key '" + item.key() + "'");
      }
      apply_setting(spec, item.key(), setting_text(item.key(), item.value()));
    }
  }
  for (const std::string& key : option_keys()) {
    if (app->count("--" + key) > 0) apply_setting(spec, key, flags.values[key]);
  }
  validate(spec);
  return spec;
}

RunSpec parse_args(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  const char* env = std::getenv("MESA_SEED");
  return parse_args(args, env ? std::optional<std::string>(env) : std::nullopt);
}

std::vector<SweepRow> sweep_rows(SweepAxis axis, const CompressionPolicy& base, std::size_t heads) {
  std::vector<SweepRow> rows;
  CompressionPolicy none = base;
  for (OpKind op : kAllOpKinds) none.set_op(op, false);
  none.msa = none.ffn = true;
  CompressionPolicy all = none;
  for (OpKind op : kAllOpKinds) all.set_op(op, true);

  switch (axis) {
    case SweepAxis::kCompressOp:
      rows.push_back({"none", none});
      for (OpKind op : kAllOpKinds) {
        CompressionPolicy p = none;
        p.set_op(op, true);
        rows.push_back({std::string(to_string(op)), p});
      }
      rows.push_back({"all", all});
      break;
    case SweepAxis::kCompressModule: {
      rows.push_back({"none", none});
      CompressionPolicy msa = all;
      msa.ffn = false;
      rows.push_back({"msa", msa});
      CompressionPolicy ffn = all;
      ffn.msa = false;
      rows.push_back({"ffn", ffn});
      rows.push_back({"msa+ffn", all});
      break;
    }
    case SweepAxis::kGranularity: {
      CompressionPolicy head = all;
      head.granularity = {Granularity::Kind::kHead, 0};
      rows.push_back({"head", head});
      CompressionPolicy layer = all;
      layer.granularity = {Granularity::Kind::kLayer, 0};
      rows.push_back({"layer", layer});
      CompressionPolicy channel = all;
      channel.granularity = {Granularity::Kind::kChannel, heads};
      rows.push_back({"channel:" + std::to_string(heads), channel});
      break;
    }
  }
  return rows;
}

namespace {

struct RunOutcome {
  int exit_code = kExitOk;
  TrainReport report;
  std::string message;
};

// Per-op rows must add up to the totals and compression never adds bytes.
std::optional<std::string> ledger_violation(const LedgerReport& r) {
  std::size_t tensors = 0, baseline = 0, actual = 0, params = 0;
  for (const OpRow& row : r.per_op) {
    tensors += row.tensors;
    baseline += row.baseline_bytes;
    actual += row.actual_bytes;
    params += row.quant_param_bytes;
  }
  if (tensors != r.tensors || baseline != r.baseline_bytes || actual != r.actual_bytes ||
      params != r.quant_param_bytes) {
    return "ledger per-op rows do not sum to totals";
  }
  if (r.actual_bytes > r.baseline_bytes) return "ledger actual bytes exceed the baseline";
  if (r.peak_actual_bytes > r.peak_baseline_bytes) return "ledger actual peak exceeds the baseline peak";
  return std::nullopt;
}

json metrics_record(const StepMetrics& m) {
  const LedgerReport& l = m.ledger;
  return {{"step", m.step},
          {"loss", m.loss},
          {"accuracy", m.accuracy},
          {"lr", m.lr},
          {"ledger",
           {{"baseline_bytes", l.baseline_bytes},
            {"actual_bytes", l.actual_bytes},
            {"quant_param_bytes", l.quant_param_bytes},
            {"reduction_ratio", l.reduction_ratio},
            {"peak_baseline_bytes", l.peak_baseline_bytes},
            {"peak_actual_bytes", l.peak_actual_bytes}}}};
}

std::string float_text(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

void write_artifacts(const fs::path& dir, const RunSpec& spec, const TrainReport& report, bool append,
                     double seconds) {
  const auto mode = append ? std::ios::app : std::ios::trunc;
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::out | mode);
  for (const StepMetrics& m : report.metrics) metrics << metrics_record(m).dump() << '\n';

  std::ofstream traj(dir / "trajectories.csv", std::ios::out | mode);
  if (!append) traj << "step,layer,group,alpha,beta\n";
  for (const TrajectoryPoint& p : report.trajectories) {
    traj << p.step << ',' << p.layer << ',' << p.group << ',' << float_text(p.alpha) << ',' << float_text(p.beta)
         << '\n';
  }

  std::ofstream(dir / "ledger.txt") << report.ledger.to_table();

  const json summary = {{"run_spec", spec.to_json()}, {"report", to_json(report)}};
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  std::ofstream(dir / "timing.json") << json{{"runtime_seconds", seconds}}.dump() << '\n';
  if (!metrics || !traj) throw std::runtime_error("failed writing artifacts under " + dir.string());
}

template <Real T>
RunOutcome run_training(const RunSpec& spec, const fs::path& dir) {
  const auto start = std::chrono::steady_clock::now();
  Trainer<T> trainer(spec.model, spec.train);
  if (spec.resume) trainer.load_checkpoint(*spec.resume);
  RunOutcome out;
  out.report = trainer.run(spec.stop_after);
  if (spec.save_checkpoint) trainer.save_checkpoint(*spec.save_checkpoint);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_artifacts(dir, spec, out.report, spec.resume.has_value(), seconds);
  if (out.report.status == RunStatus::kDiverged) {
    out.exit_code = kExitDiverged;
    out.message = out.report.failure;
  } else if (auto v = ledger_violation(out.report.ledger)) {
    out.exit_code = kExitInvariant;
    out.message = *v;
  }
  return out;
}

RunOutcome run_one(const RunSpec& spec, const fs::path& dir) {
  fs::create_directories(dir);
  if (spec.train.precision == Precision::kOracle) return run_training<double>(spec, dir);
  return run_training<float>(spec, dir);
}

// Runs task(i) for i in [0, n) on up to `jobs` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& task) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) task(i);
  };
  const std::size_t threads = std::min(jobs, n);
  if (threads <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

RunSpec single_run_spec(const RunSpec& spec, std::uint64_t seed, const CompressionPolicy& policy,
                        const fs::path& dir) {
  RunSpec r = spec;
  r.command = Command::kTrain;
  r.seeds = {seed};
  r.train.seed = seed;
  r.train.policy = policy;
  r.out_dir = dir.string();
  return r;
}

fs::path seed_dir(const fs::path& base, std::size_t seeds, std::uint64_t seed) {
  return seeds == 1 ? base : base / ("seed-" + std::to_string(seed));
}

int worst(int a, int b) { return std::max(a, b); }

int command_train(const RunSpec& spec, std::ostream& log) {
  std::vector<RunOutcome> outcomes(spec.seeds.size());
  std::vector<std::exception_ptr> errors(spec.seeds.size());
  parallel_for(spec.seeds.size(), spec.jobs, [&](std::size_t i) {
    const std::uint64_t seed = spec.seeds[i];
    const fs::path dir = seed_dir(spec.out_dir, spec.seeds.size(), seed);
    try {
      outcomes[i] = run_one(single_run_spec(spec, seed, spec.train.policy, dir), dir);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  int code = kExitOk;
  for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    const RunOutcome& o = outcomes[i];
    log << "seed " << spec.seeds[i] << ": status=" << to_string(o.report.status)
        << " steps=" << o.report.steps_completed << " final_loss=" << o.report.final_loss
        << " eval_accuracy=" << o.report.eval_accuracy << " reduction=" << o.report.ledger.reduction_ratio << '\n';
    if (!o.message.empty()) log << "  " << o.message << '\n';
    code = worst(code, o.exit_code);
  }
  return code;
}

int command_sweep(const RunSpec& spec, std::ostream& log) {
  const std::vector<SweepRow> rows = sweep_rows(spec.axis, spec.train.policy, spec.model.heads);
  const std::size_t per_row = spec.seeds.size();
  const std::size_t total = rows.size() * per_row;
  std::vector<RunOutcome> outcomes(total);
  std::vector<std::exception_ptr> errors(total);
  parallel_for(total, spec.jobs, [&](std::size_t i) {
    const SweepRow& row = rows[i / per_row];
    const std::uint64_t seed = spec.seeds[i % per_row];
    const fs::path dir = seed_dir(fs::path(spec.out_dir) / row.name, per_row, seed);
    try {
      outcomes[i] = run_one(single_run_spec(spec, seed, row.policy, dir), dir);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  int code = kExitOk;
  json out_rows = json::array();
  std::vector<double> reductions;
  log << std::left << std::setw(12) << "row" << std::right << std::setw(14) << "eval_acc" << std::setw(16)
      << "baseline_B" << std::setw(14) << "actual_B" << std::setw(12) << "reduction" << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double acc_sum = 0.0;
    json accs = json::array();
    const TrainReport& first = outcomes[r * per_row].report;
    for (std::size_t s = 0; s < per_row; ++s) {
      const RunOutcome& o = outcomes[r * per_row + s];
      acc_sum += o.report.eval_accuracy;
      accs.push_back(o.report.eval_accuracy);
      code = worst(code, o.exit_code);
    }
    const double mean_acc = acc_sum / static_cast<double>(per_row);
    reductions.push_back(first.ledger.reduction_ratio);
    out_rows.push_back({{"name", rows[r].name},
                        {"policy", to_json(rows[r].policy)},
                        {"run_spec", single_run_spec(spec, spec.seeds.front(), rows[r].policy,
                                                     fs::path(spec.out_dir) / rows[r].name)
                                         .to_json()},
                        {"eval_accuracy", accs},
                        {"mean_eval_accuracy", mean_acc},
                        {"baseline_bytes", first.ledger.baseline_bytes},
                        {"actual_bytes", first.ledger.actual_bytes},
                        {"reduction_ratio", first.ledger.reduction_ratio}});
    log << std::left << std::setw(12) << rows[r].name << std::right << std::fixed << std::setprecision(4)
        << std::setw(14) << mean_acc << std::setw(16) << first.ledger.baseline_bytes << std::setw(14)
        << first.ledger.actual_bytes << std::setw(12) << first.ledger.reduction_ratio << '\n'
        << std::defaultfloat;
  }

  // Storage ordering: every compressing row saves more than "none", and the
  // full configuration saves more than any partial one.
  bool ordered = true;
  if (spec.axis != SweepAxis::kGranularity) {
    const double none = reductions.front();
    const double all = reductions.back();
    ordered = none == 0.0;
    for (std::size_t r = 1; r + 1 < reductions.size(); ++r) ordered = ordered && reductions[r] > none && all > reductions[r];
  }
  const json sweep = {{"axis", std::string(to_string(spec.axis))},
                      {"seeds", spec.seeds},
                      {"rows", out_rows},
                      {"ordering_holds", ordered}};
  std::ofstream(fs::path(spec.out_dir) / "sweep.json") << sweep.dump(2) << '\n';
  if (!ordered) {
    log << "storage ordering violated\n";
    code = worst(code, kExitInvariant);
  }
  return code;
}

int command_microbench(const RunSpec& spec, std::ostream& log) {
  constexpr std::size_t kHeads = 4;
  constexpr std::size_t kInner = 256;
  constexpr std::size_t kBins = 10;
  const std::size_t batch = std::max<std::size_t>(1, (spec.bench.elements + kHeads * kInner - 1) / (kHeads * kInner));
  const std::vector<double> means = {-3.0, -1.0, 1.0, 3.0};
  const std::vector<double> scales = {0.5, 1.0, 1.5, 2.0};
  const TensorF x = generate_heterogeneous_heads(batch, kHeads, 16, kInner / 16, means, scales, spec.train.seed);
  const QuantGroupLayout layout = QuantGroupLayout::head_wise(x.shape());

  json results = json::array();
  for (const simd::KernelTable* table : simd::available_kernels()) {
    simd::force_isa(table->isa);
    for (Rounding rounding : {Rounding::kNearest, Rounding::kStochastic}) {
      QuantizerState state;
      state.rounding = rounding;
      state.scheme = spec.train.policy.scheme;
      init_params(state, x, layout);
      Rng rng = Rng::for_stream(spec.train.seed, "microbench");

      CompressedActivation c;
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t it = 0; it < spec.bench.iterations; ++it) c = quantize(x, state, layout, rng);
      const auto t1 = std::chrono::steady_clock::now();
      TensorF y;
      for (std::size_t it = 0; it < spec.bench.iterations; ++it) y = dequantize(c);
      const auto t2 = std::chrono::steady_clock::now();

      // Round-trip error in units of one quantization step of its group.
      std::vector<std::size_t> hist(kBins + 1, 0);
      double max_err = 0.0;
      double sq = 0.0;
      layout.for_each_run([&](std::size_t b, std::size_t e, std::size_t g, std::size_t) {
        const double step = state.scheme == QuantScheme::kSymmetric ? c.alpha_snapshot[g] / 127.0
                                                                    : c.alpha_snapshot[g] / 255.0;
        for (std::size_t i = b; i < e; ++i) {
          const double err = std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i]));
          max_err = std::max(max_err, err);
          sq += err * err;
          const double units = err / step;
          hist[std::min(kBins, static_cast<std::size_t>(units * kBins))] += 1;
        }
      });
      const double n = static_cast<double>(x.numel() * spec.bench.iterations);
      json row = {{"isa", std::string(simd::isa_name(table->isa))},
                  {"rounding", std::string(to_string(rounding))},
                  {"scheme", std::string(to_string(state.scheme))},
                  {"elements", x.numel()},
                  {"iterations", spec.bench.iterations},
                  {"encode_ns_per_element", std::chrono::duration<double, std::nano>(t1 - t0).count() / n},
                  {"decode_ns_per_element", std::chrono::duration<double, std::nano>(t2 - t1).count() / n},
                  {"max_abs_error", max_err},
                  {"mse", sq / static_cast<double>(x.numel())},
                  {"error_histogram_step_units", hist}};
      log << std::left << std::setw(8) << simd::isa_name(table->isa) << std::setw(12) << to_string(rounding)
          << " encode " << std::fixed << std::setprecision(3) << row["encode_ns_per_element"].get<double>()
          << " ns/elem  decode " << row["decode_ns_per_element"].get<double>() << " ns/elem  max_err "
          << std::scientific << max_err << std::defaultfloat << '\n';
      results.push_back(std::move(row));
    }
  }
  simd::reset_isa();
  fs::create_directories(spec.out_dir);
  std::ofstream(fs::path(spec.out_dir) / "microbench.json")
      << json{{"run_spec", spec.to_json()}, {"results", results}}.dump(2) << '\n';
  return kExitOk;
}

void print_run(const fs::path& dir, std::ostream& log) {
  std::ifstream in(dir / "summary.json");
  const json s = json::parse(in);
  const json& r = s.at("report");
  log << dir.string() << ": status=" << r.at("status").get<std::string>()
      << " steps=" << r.at("steps_completed") << " eval_accuracy=" << r.at("eval_accuracy")
      << " final_loss=" << r.at("final_loss") << '\n';
  std::ifstream table(dir / "ledger.txt");
  log << table.rdbuf();
}

int command_report(const RunSpec& spec, std::ostream& log) {
  const fs::path dir = spec.out_dir;
  if (fs::exists(dir / "sweep.json")) {
    std::ifstream in(dir / "sweep.json");
    const json s = json::parse(in);
    log << "sweep axis " << s.at("axis").get<std::string>() << " (ordering "
        << (s.at("ordering_holds").get<bool>() ? "holds" : "violated") << ")\n";
    for (const json& row : s.at("rows")) {
      log << "  " << std::left << std::setw(12) << row.at("name").get<std::string>() << std::right
          << " eval=" << row.at("mean_eval_accuracy") << " reduction=" << row.at("reduction_ratio") << '\n';
    }
    return kExitOk;
  }
  if (fs::exists(dir / "summary.json")) {
    print_run(dir, log);
    return kExitOk;
  }
  bool any = false;
  if (fs::is_directory(dir)) {
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (fs::exists(e.path() / "summary.json")) subdirs.push_back(e.path());
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& p : subdirs) {
      print_run(p, log);
      any = true;
    }
  }
  if (!any) throw UsageError("no run artifacts found under " + dir.string());
  return kExitOk;
}

}  // namespace

int run(const RunSpec& spec, std::ostream& log) {
  switch (spec.command) {
    case Command::kTrain:
      return command_train(spec, log);
    case Command::kSweep:
      return command_sweep(spec, log);
    case Command::kMicrobench:
      return command_microbench(spec, log);
    case Command::kReport:
      return command_report(spec, log);
  }
  return kExitUsage;
}

int main_entry(int argc, const char* const* argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string_view a = argv[i];
    if (a == "-h" || a == "--help") {
      ParsedFlags flags;
      std::cout << make_app(flags)->help();
      return kExitOk;
    }
  }
  try {
    const RunSpec spec = parse_args(argc, argv);
    return run(spec, std::cout);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ContractError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace qact::cli
