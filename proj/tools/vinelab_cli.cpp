// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

// vinelab: run, compare, analyze and replay experiments.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "vinelab/acceptance.hpp"
#include "vinelab/config.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/harness.hpp"

namespace {

namespace fs = std::filesystem;
using namespace vinelab;

struct RunArgs {
  std::string config = "vineppo_default";
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> overrides;
  bool resume = false;
  bool dry_run = false;
  std::string suite;
  std::string work_dir = "acceptance_runs";
  std::vector<int> only;
  bool fresh = false;
  int workers = 1;
};

int do_acceptance(const RunArgs& args) {
  if (args.suite != "acceptance") {
    std::cerr << fmt::format("error: unknown suite '{}' (available: acceptance)\n", args.suite);
    return kExitConfig;
  }
  AcceptanceOptions options;
  options.work_dir = args.work_dir;
  options.only = args.only;
  options.reuse_runs = !args.fresh;
  options.workers = args.workers;
  const auto results = run_acceptance(options, std::cerr);
  print_acceptance_table(results, std::cout);
  for (const auto& r : results)
    if (!r.passed) return kExitFailure;
  return kExitOk;
}

int do_run(const RunArgs& args) {
  if (!args.suite.empty()) return do_acceptance(args);
  ExperimentConfig config;
  try {
    config = resolve_config({args.config, args.overrides, vinelab_environment()});
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const std::vector<std::uint64_t> seeds = args.seeds.empty() ? config.seeds : args.seeds;
  if (args.dry_run) {
    std::cout << to_json(config).dump(2) << '\n';
    return kExitOk;
  }
  int status = kExitOk;
  for (std::uint64_t seed : seeds) {
    std::cerr << fmt::format("== {} seed {} -> {}\n", config.name, seed,
                             run_directory(config, seed).string());
    const int code = run_experiment(config, seed, args.resume, std::cerr);
    if (code != kExitOk) {
      status = code;
      break;
    }
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vinelab: PPO and Monte Carlo credit assignment on a synthetic token MDP"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "train one configuration, or run the acceptance suite");
  run_cmd->add_option("--config,-c", run.config, "preset name or JSON config file")
      ->capture_default_str();
  run_cmd->add_option("--seed,-s", run.seeds, "seed(s); default: the config's seed list");
  run_cmd->add_option("--set", run.overrides, "override, e.g. --set ppo.kl_coef=0.05");
  run_cmd->add_flag("--resume", run.resume, "continue from the run's trainer.state");
  run_cmd->add_flag("--dry-run", run.dry_run, "print the resolved config and exit");
  run_cmd->add_option("--suite", run.suite, "run a named suite instead (acceptance)");
  run_cmd->add_option("--work-dir", run.work_dir, "acceptance: directory for runs")
      ->capture_default_str();
  run_cmd->add_option("--only", run.only, "acceptance: criterion numbers to run");
  run_cmd->add_flag("--fresh", run.fresh, "acceptance: retrain even if finished runs exist");
  run_cmd->add_option("--workers", run.workers, "acceptance: worker threads")->capture_default_str();

  std::vector<std::string> compare_dirs;
  CompareOptions compare;
  auto* compare_cmd = app.add_subcommand("compare", "compare finished runs");
  compare_cmd->add_option("dirs", compare_dirs, "run directories")->required()->expected(2, -1);
  compare_cmd->add_option("--target-delta", compare.target_delta,
                          "steps-to-target threshold above the initial test accuracy")
      ->capture_default_str();
  compare_cmd->add_option("--kl-points", compare.kl_points)->capture_default_str();

  std::string analyze_dir;
  auto* analyze_cmd = app.add_subcommand("analyze", "write value-analysis tables for a run");
  analyze_cmd->add_option("dir", analyze_dir, "run directory")->required();

  std::string replay_dir;
  ReplayOptions replay;
  auto* replay_cmd = app.add_subcommand("replay", "re-evaluate a run's saved policy");
  replay_cmd->add_option("dir", replay_dir, "run directory")->required();
  replay_cmd->add_option("--which", replay.which, "best | final")->capture_default_str();
  replay_cmd->add_option("--split", replay.split, "train | validation | test")->capture_default_str();
  replay_cmd->add_option("--rounds", replay.rounds)->capture_default_str();
  replay_cmd->add_option("--seed", replay.seed)->capture_default_str();

  auto* presets_cmd = app.add_subcommand("presets", "list built-in configurations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_cmd) return do_run(run);
    if (*compare_cmd) {
      std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
      compare_runs(dirs, compare, std::cout);
    } else if (*analyze_cmd) {
      analyze_run(analyze_dir, std::cout);
    } else if (*replay_cmd) {
      replay_run(replay_dir, replay, std::cout);
    } else if (*presets_cmd) {
      for (const auto& name : preset_names()) std::cout << name << '\n';
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
