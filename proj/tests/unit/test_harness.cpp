// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vinelab/checkpoint.hpp"
#include "vinelab/config.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/harness.hpp"

using namespace vinelab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny(const fs::path& out, const char* name = "tiny_vineppo") {
  ExperimentConfig c = preset(name);
  c.output_dir = out.string();
  c.ppo.iterations = 4;
  c.checkpoint_every = 2;
  return c;
}

fs::path scratch(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("a run directory is complete and reproducible") {
  const fs::path root = scratch("vinelab_harness_a");
  std::ostringstream log;
  const ExperimentConfig c = tiny(root);
  REQUIRE(run_experiment(c, 1, false, log) == kExitOk);
  const fs::path dir = run_directory(c, 1);
  for (const char* f : {"manifest.json", "config.json", "metrics.jsonl", "timing.jsonl", "audit.jsonl",
                        "trainer.state", "final.policy", "best.policy", "summary.json"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  const json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["seed"] == 1);
  CHECK(manifest["code_version"].get<std::string>() == code_version());
  CHECK(manifest["environment"].contains("compiler"));
  CHECK(from_json(manifest["config"]).name == "tiny_vineppo");

  const RunRecord r = load_run(dir);
  CHECK(r.finished);
  CHECK(r.metrics.size() == 5);
  CHECK_FALSE(r.audit.values.empty());

  const std::string first = slurp(dir / "metrics.jsonl");
  REQUIRE(run_experiment(c, 1, false, log) == kExitOk);
  CHECK(slurp(dir / "metrics.jsonl") == first);
}

TEST_CASE("compare, analyze and replay") {
  const fs::path root = scratch("vinelab_harness_b");
  std::ostringstream log;
  const ExperimentConfig a = tiny(root / "x");
  const ExperimentConfig b = tiny(root / "y");
  REQUIRE(run_experiment(a, 1, false, log) == kExitOk);
  REQUIRE(run_experiment(b, 1, false, log) == kExitOk);

  std::ostringstream report;
  compare_runs({run_directory(a, 1), run_directory(b, 1)}, {}, report);
  CHECK(report.str().find("delta") != std::string::npos);
  CHECK(report.str().find("+0.0000") != std::string::npos);
  CHECK(report.str().find("at 100.0%") != std::string::npos);

  CHECK_THROWS_WITH_AS(compare_runs({run_directory(a, 1), root / "missing"}, {}, report),
                       doctest::Contains("missing"), FormatError);
  ExperimentConfig other = tiny(root / "z");
  other.env.max_length = 7;
  REQUIRE(run_experiment(other, 1, false, log) == kExitOk);
  CHECK_THROWS(compare_runs({run_directory(a, 1), run_directory(other, 1)}, {}, report));

  std::ostringstream analysis;
  analyze_run(run_directory(a, 1), analysis);
  CHECK(fs::exists(run_directory(a, 1) / "analysis" / "value_mae.csv"));

  std::ostringstream replay;
  replay_run(run_directory(a, 1), {}, replay);
  const json line = json::parse(replay.str());
  CHECK(line.contains("accuracy"));
}

TEST_CASE("exit codes for bad configs and divergence") {
  const fs::path root = scratch("vinelab_harness_c");
  std::ostringstream log;
  ExperimentConfig c = tiny(root);
  c.ppo.minibatch_size = 5;
  CHECK(run_experiment(c, 1, false, log) == kExitConfig);
  CHECK(json::parse(slurp(run_directory(c, 1) / "error.json"))["type"] == "config");

  c = tiny(root, "tiny_ppo");
  c.ppo.lr_policy = 1e308;
  c.ppo.lr_value = 1e308;
  CHECK(run_experiment(c, 1, false, log) == kExitDivergence);
  CHECK(json::parse(slurp(run_directory(c, 1) / "error.json"))["type"] == "divergence");
  CHECK(fs::exists(run_directory(c, 1) / "metrics.jsonl"));
}

TEST_CASE("interrupted runs resume from their checkpoint") {
  const fs::path root = scratch("vinelab_harness_d");
  std::ostringstream log;
  const ExperimentConfig full = tiny(root / "full");
  REQUIRE(run_experiment(full, 2, false, log) == kExitOk);

  ExperimentConfig half = tiny(root / "resumed");
  half.ppo.iterations = 2;
  REQUIRE(run_experiment(half, 2, false, log) == kExitOk);
  half.ppo.iterations = 4;
  REQUIRE(run_experiment(half, 2, true, log) == kExitOk);
  CHECK(slurp(run_directory(half, 2) / "metrics.jsonl") == slurp(run_directory(full, 2) / "metrics.jsonl"));
  CHECK(slurp(run_directory(half, 2) / "final.policy") == slurp(run_directory(full, 2) / "final.policy"));
}

TEST_CASE("policy files round-trip exactly and reject garbage") {
  const Environment env(EnvConfig::default_env());
  const auto p = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{4, 8}, 3, 0.7);
  std::stringstream ss;
  write_policy(ss, p);
  const auto q = read_policy(ss);
  REQUIRE(q.num_params() == p.num_params());
  for (std::size_t i = 0; i < p.num_params(); ++i) CHECK(p.params()[i] == q.params()[i]);
  CHECK(parameter_hash(p) == parameter_hash(q));

  std::istringstream bad("vinelab-policy 1\narch mlp\nvocab_digits 10\n");
  CHECK_THROWS_AS(read_policy(bad), FormatError);
  std::istringstream wrong("something else\n");
  CHECK_THROWS_AS(read_policy(wrong), FormatError);
  CHECK_THROWS_AS(load_policy("/does/not/exist.policy"), FormatError);
}
