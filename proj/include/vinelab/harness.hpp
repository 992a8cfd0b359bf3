// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_HARNESS_HPP_
#define VINELAB_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vinelab/config.hpp"
#include "vinelab/records.hpp"
#include "vinelab/trainers.hpp"

namespace vinelab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;

std::string code_version();
// Compiler, standard library, OS and build flags as one JSON object string.
std::string environment_fingerprint();

// Deterministic task splits: sft, train, validation and test come from
// independent seed streams of config.tasks.seed.
struct ExperimentTasks {
  std::vector<TaskInstance> sft;
  TaskSplits splits;
};
ExperimentTasks make_tasks(const ExperimentConfig& config);

// The frozen reference policy: loaded from config.reference_checkpoint, or
// trained with the SFT settings and cached under
// <output_dir>/_reference/<fingerprint>.policy.
PolicySnapshot obtain_reference(const ExperimentConfig& config, const ExperimentTasks& tasks,
                                std::ostream* log = nullptr);

std::filesystem::path run_directory(const ExperimentConfig& config, std::uint64_t seed);

// One seed of one experiment. Files written to the run directory:
//   manifest.json     resolved config, seed, code version, env fingerprint
//   metrics.jsonl     one IterationMetrics per line (reproducible bytes)
//   timing.jsonl      wall-clock per iteration
//   audit.jsonl       value-audit and top-action records (ppo/vineppo)
//   trainer.state     latest resumable checkpoint (ppo/vineppo)
//   final.policy, best.policy
//   summary.json      headline numbers; its presence marks a finished run
//   error.json        on failure: {"type", "message"}
// Returns an exit code (kExit*). With `resume`, continues from
// trainer.state when present.
int run_experiment(const ExperimentConfig& config, std::uint64_t seed, bool resume,
                   std::ostream& log);

// Reads back a finished (or partial) run.
struct RunRecord {
  std::filesystem::path dir;
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::vector<IterationMetrics> metrics;
  AuditLog audit;
  bool finished = false;
};
RunRecord load_run(const std::filesystem::path& dir);  // throws FormatError naming the path

// Test accuracy at the iteration with the best validation accuracy
// (earliest on ties).
double final_accuracy(std::span<const IterationMetrics> metrics);

struct CompareOptions {
  // Target = mean iteration-0 test accuracy + delta.
  double target_delta = 0.05;
  int kl_points = 20;
  double kl_tolerance = 0.01;
};
// Groups runs by config name; prints final accuracy mean +- std,
// steps-to-target (and the ratio between groups) and KL-matched accuracy.
// Throws ContractViolation for runs with different environments.
void compare_runs(const std::vector<std::filesystem::path>& dirs, const CompareOptions& options,
                  std::ostream& out);

// Writes fig8_mae.csv, fig11a_acc.csv, fig10_profile.csv, fig11b_topaction.csv
// and fig6_kl.csv into <dir>/analysis and prints a short summary.
void analyze_run(const std::filesystem::path& dir, std::ostream& out);

struct ReplayOptions {
  std::string which = "best";  // best | final
  std::string split = "test";  // train | validation | test
  int rounds = 16;
  std::uint64_t seed = 0;
};
// Re-evaluates a saved policy; prints a JSON line.
void replay_run(const std::filesystem::path& dir, const ReplayOptions& options, std::ostream& out);

}  // namespace vinelab

#endif  // VINELAB_HARNESS_HPP_
