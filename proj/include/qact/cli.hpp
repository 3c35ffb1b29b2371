// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qact/model.hpp"
#include "qact/trainer.hpp"

namespace qact::cli {

enum class Command { kTrain, kSweep, kMicrobench, kReport };
enum class SweepAxis { kCompressOp, kCompressModule, kGranularity };

std::string_view to_string(Command c);
std::string_view to_string(SweepAxis a);

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitInvariant = 4;

struct MicrobenchSpec {
  std::size_t elements = 1 << 16;
  std::size_t iterations = 20;
};

// Everything one invocation needs, validated before any computation.
struct RunSpec {
  Command command = Command::kTrain;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = "qact-out";
  SweepAxis axis = SweepAxis::kCompressOp;
  std::size_t jobs = 1;
  std::optional<std::string> save_checkpoint;
  std::optional<std::string> resume;
  // Stop a train run early at this step (typically with save_checkpoint).
  std::optional<std::uint64_t> stop_after;
  MicrobenchSpec bench;

  nlohmann::json to_json() const;
};

// Option keys accepted both as --flags and as config-file keys.
const std::vector<std::string>& option_keys();

// Parses argv[1..]. Settings layer as defaults < MESA_SEED < --config file <
// explicit flags. Throws UsageError on unknown keys, malformed values or
// invalid combinations. `env_seed` stands in for the MESA_SEED variable.
RunSpec parse_args(const std::vector<std::string>& args, std::optional<std::string> env_seed);

// Reads MESA_SEED from the environment and parses argv.
RunSpec parse_args(int argc, const char* const* argv);

// Executes the spec, writing artifacts under spec.out_dir. Returns an exit code.
int run(const RunSpec& spec, std::ostream& log);

// One sweep row: its name and the policy it runs.
struct SweepRow {
  std::string name;
  CompressionPolicy policy;
};
std::vector<SweepRow> sweep_rows(SweepAxis axis, const CompressionPolicy& base, std::size_t heads);

// Full command line entry point: parse, run, map errors to exit codes.
int main_entry(int argc, const char* const* argv);

}  // namespace qact::cli
