// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vinelab/config.hpp"
#include "vinelab/errors.hpp"

using namespace vinelab;
namespace fs = std::filesystem;

namespace {

std::string config_error(const ConfigSource& src) {
  try {
    resolve_config(src);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("every preset validates and round-trips through json") {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = preset(name);
    CHECK_NOTHROW(c.validate());
    CHECK(to_json(from_json(to_json(c))) == to_json(c));
  }
  CHECK(preset("vineppo_k3").ppo.mc_rollouts == 3);
  CHECK(preset("ppo_default").algorithm == Algorithm::kPpo);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("overrides, environment and precedence") {
  ConfigSource src{"vineppo_default", {"ppo.kl_coef=0.5", "name=custom"}, {{"VINELAB_PPO__KL_COEF", "0.25"}}};
  ExperimentConfig c = resolve_config(src);
  CHECK(c.ppo.kl_coef == 0.5);  // --set beats the environment
  CHECK(c.name == "custom");
  src.overrides = {};
  CHECK(resolve_config(src).ppo.kl_coef == 0.25);
  src.environment = {{"VINELAB_SEEDS", "[4, 5]"}};
  CHECK(resolve_config(src).seeds == std::vector<std::uint64_t>{4, 5});
}

TEST_CASE("unknown keys and bad values are rejected with the key name") {
  CHECK(config_error({"vineppo_default", {"ppo.bogus=1"}, {}}).find("ppo.bogus") != std::string::npos);
  CHECK(config_error({"vineppo_default", {"ppo.mc_rollouts=zero"}, {}}).find("ppo.mc_rollouts") !=
        std::string::npos);
  CHECK(config_error({"vineppo_default", {"ppo.mc_rollouts=0"}, {}}).find("mc_rollouts") !=
        std::string::npos);
  CHECK(config_error({"vineppo_default", {"algorithm=a2c"}, {}}).find("algorithm") != std::string::npos);
  CHECK(config_error({"vineppo_default", {}, {{"VINELAB_PPO__NOPE", "1"}}}).find("ppo.nope") !=
        std::string::npos);
  CHECK(config_error({"vineppo_default", {"no_equals_sign"}, {}}) != "");
}

TEST_CASE("config files extend presets and may carry comments") {
  const auto path = write_file("vinelab_cfg_test.json", R"({
    // a comment
    "extends": "tiny_ppo",
    "name": "from_file",
    "ppo": {"iterations": 3}
  })");
  const ExperimentConfig c = resolve_config({path.string(), {}, {}});
  CHECK(c.name == "from_file");
  CHECK(c.algorithm == Algorithm::kPpo);
  CHECK(c.ppo.iterations == 3);
  CHECK(c.env == EnvConfig::tiny());

  const auto bad = write_file("vinelab_cfg_bad.json", R"({"ppo": {"iteration": 3}})");
  CHECK(config_error({bad.string(), {}, {}}).find("ppo.iteration") != std::string::npos);
  CHECK(config_error({"/does/not/exist.json", {}, {}}) != "");
}

TEST_CASE("cross-field validation") {
  ExperimentConfig c = preset("vineppo_default");
  c.env.vocab_digits = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset("vineppo_default");
  c.ppo.minibatch_size = 100;  // does not divide 256
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
