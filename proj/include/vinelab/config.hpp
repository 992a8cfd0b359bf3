// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_CONFIG_HPP_
#define VINELAB_CONFIG_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vinelab/env.hpp"
#include "vinelab/policy.hpp"
#include "vinelab/trainers.hpp"

namespace vinelab {

enum class Algorithm { kPpo, kVineppo, kRestem, kDpoPositive, kSft };

std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view name);  // throws ConfigError

struct ModelConfig {
  Architecture architecture = Architecture::kMlp;
  int window = 16;
  MlpShape shape{16, 128};
  double init_scale = 0.05;
  std::uint64_t init_seed = 5;
};

struct SplitConfig {
  std::size_t sft = 8000;
  std::size_t train = 16384;
  std::size_t validation = 256;
  std::size_t test = 256;
  std::uint64_t seed = 20;
};

struct ExperimentConfig {
  std::string name = "vineppo_default";
  Algorithm algorithm = Algorithm::kVineppo;
  EnvConfig env = EnvConfig::default_env();
  ModelConfig model;
  SplitConfig tasks;
  SftConfig sft{7, 32, 3e-3, 3};
  PpoConfig ppo;
  RestemConfig restem;
  DpoConfig dpo;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "runs";
  int checkpoint_every = 5;  // iterations; the latest checkpoint is always kept
  int workers = 1;
  // Optional pre-trained reference policy; trained from the SFT settings
  // (and cached under output_dir) when empty.
  std::string reference_checkpoint;

  void validate() const;  // throws ConfigError naming the offending key
};

nlohmann::json to_json(const ExperimentConfig& config);
// Strict: unknown keys and wrong value types throw ConfigError naming the
// full key path (e.g. "ppo.kl_coef").
ExperimentConfig from_json(const nlohmann::json& j);

std::vector<std::string> preset_names();
bool is_preset(std::string_view name);
ExperimentConfig preset(std::string_view name);

// Resolution order: preset name or JSON file (comments allowed), then
// VINELAB_* environment variables, then explicit key=value overrides.
// Environment keys map VINELAB_PPO__KL_COEF to "ppo.kl_coef".
inline constexpr std::string_view kEnvPrefix = "VINELAB_";

struct ConfigSource {
  std::string config;  // preset name or path
  std::vector<std::string> overrides;  // "key.path=value"
  std::map<std::string, std::string> environment;  // usually from environ
};

ExperimentConfig resolve_config(const ConfigSource& source);

std::map<std::string, std::string> vinelab_environment();

}  // namespace vinelab

#endif  // VINELAB_CONFIG_HPP_
