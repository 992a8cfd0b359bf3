// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/config.hpp"

#include <fmt/format.h>

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "vinelab/errors.hpp"

extern char** environ;

namespace vinelab {

using nlohmann::json;

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kPpo: return "ppo";
    case Algorithm::kVineppo: return "vineppo";
    case Algorithm::kRestem: return "restem";
    case Algorithm::kDpoPositive: return "dpo_positive";
    case Algorithm::kSft: return "sft";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : {Algorithm::kPpo, Algorithm::kVineppo, Algorithm::kRestem,
                      Algorithm::kDpoPositive, Algorithm::kSft})
    if (to_string(a) == name) return a;
  throw ConfigError(fmt::format(
      "algorithm: unknown value '{}' (expected ppo, vineppo, restem, dpo_positive or sft)", name));
}

namespace {

// Calls v(path, field) for every configurable field. Seeds and worker
// counts inside the algorithm blocks come from the run-level keys.
template <typename C, typename V>
void visit_fields(C& c, V&& v) {
  v("name", c.name);
  v("algorithm", c.algorithm);
  v("seeds", c.seeds);
  v("output_dir", c.output_dir);
  v("checkpoint_every", c.checkpoint_every);
  v("workers", c.workers);
  v("reference_checkpoint", c.reference_checkpoint);

  v("env.num_operands", c.env.difficulty.num_operands);
  v("env.base", c.env.difficulty.base);
  v("env.vocab_digits", c.env.vocab_digits);
  v("env.max_length", c.env.max_length);

  v("model.architecture", c.model.architecture);
  v("model.window", c.model.window);
  v("model.embed_dim", c.model.shape.embed_dim);
  v("model.hidden_dim", c.model.shape.hidden_dim);
  v("model.init_scale", c.model.init_scale);
  v("model.init_seed", c.model.init_seed);

  v("tasks.sft", c.tasks.sft);
  v("tasks.train", c.tasks.train);
  v("tasks.validation", c.tasks.validation);
  v("tasks.test", c.tasks.test);
  v("tasks.seed", c.tasks.seed);

  v("sft.epochs", c.sft.epochs);
  v("sft.batch_size", c.sft.batch_size);
  v("sft.lr", c.sft.lr);
  v("sft.seed", c.sft.seed);

  auto& p = c.ppo;
  v("ppo.iterations", p.iterations);
  v("ppo.prompts_per_iteration", p.prompts_per_iteration);
  v("ppo.samples_per_prompt", p.samples_per_prompt);
  v("ppo.minibatch_size", p.minibatch_size);
  v("ppo.epochs", p.epochs);
  v("ppo.clip_eps", p.clip_eps);
  v("ppo.kl_coef", p.kl_coef);
  v("ppo.value_clip", p.value_clip);
  v("ppo.lr_policy", p.lr_policy);
  v("ppo.lr_value", p.lr_value);
  v("ppo.temperature", p.temperature);
  v("ppo.gae_lambda", p.gae_lambda);
  v("ppo.mc_rollouts", p.mc_rollouts);
  v("ppo.mc_temperature", p.mc_temperature);
  v("ppo.normalize_advantages", p.normalize_advantages);
  v("ppo.eval_temperature", p.eval_temperature);
  v("ppo.eval_rounds", p.eval_rounds);
  v("ppo.eval_train_tasks", p.eval_train_tasks);
  v("ppo.audit_every", p.audit_every);
  v("ppo.audit_trajectories", p.audit_trajectories);
  v("ppo.audit_top_action_trials", p.audit_top_action_trials);

  auto& r = c.restem;
  v("restem.iterations", r.iterations);
  v("restem.train_prompts", r.train_prompts);
  v("restem.samples_per_prompt", r.samples_per_prompt);
  v("restem.epochs", r.epochs);
  v("restem.batch_size", r.batch_size);
  v("restem.lr", r.lr);
  v("restem.temperature", r.temperature);
  v("restem.eval_temperature", r.eval_temperature);
  v("restem.eval_rounds", r.eval_rounds);
  v("restem.eval_train_tasks", r.eval_train_tasks);

  auto& d = c.dpo;
  v("dpo.train_prompts", d.train_prompts);
  v("dpo.samples_per_prompt", d.samples_per_prompt);
  v("dpo.epochs", d.epochs);
  v("dpo.batch_size", d.batch_size);
  v("dpo.lr", d.lr);
  v("dpo.beta", d.beta);
  v("dpo.lambda_p", d.lambda_p);
  v("dpo.temperature", d.temperature);
  v("dpo.eval_temperature", d.eval_temperature);
  v("dpo.eval_rounds", d.eval_rounds);
  v("dpo.eval_train_tasks", d.eval_train_tasks);
}

json::json_pointer pointer(std::string_view path) {
  std::string p = "/";
  for (char ch : path) p += ch == '.' ? '/' : ch;
  return json::json_pointer(p);
}

// ---- json -> field --------------------------------------------------------

[[noreturn]] void type_error(std::string_view key, std::string_view want, const json& v) {
  throw ConfigError(fmt::format("{}: expected {}, got {}", key, want, v.dump()));
}

template <typename T>
T read_integer(std::string_view key, const json& v) {
  if (v.is_number_unsigned()) {
    const auto x = v.get<std::uint64_t>();
    if (x > static_cast<std::uint64_t>(std::numeric_limits<T>::max()))
      throw ConfigError(fmt::format("{}: value {} is out of range", key, x));
    return static_cast<T>(x);
  }
  if (v.is_number_integer()) {
    const auto x = v.get<std::int64_t>();
    if (x < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
        (x > 0 && static_cast<std::uint64_t>(x) > static_cast<std::uint64_t>(std::numeric_limits<T>::max())))
      throw ConfigError(fmt::format("{}: value {} is out of range", key, x));
    return static_cast<T>(x);
  }
  type_error(key, "an integer", v);
}

void read(std::string_view key, const json& v, int& out) { out = read_integer<int>(key, v); }
void read(std::string_view key, const json& v, std::uint64_t& out) {
  out = read_integer<std::uint64_t>(key, v);
}
void read(std::string_view key, const json& v, double& out) {
  if (!v.is_number()) type_error(key, "a number", v);
  out = v.get<double>();
}
void read(std::string_view key, const json& v, bool& out) {
  if (!v.is_boolean()) type_error(key, "true or false", v);
  out = v.get<bool>();
}
void read(std::string_view key, const json& v, std::string& out) {
  if (!v.is_string()) type_error(key, "a string", v);
  out = v.get<std::string>();
}
void read(std::string_view key, const json& v, Algorithm& out) {
  if (!v.is_string()) type_error(key, "a string", v);
  out = parse_algorithm(v.get<std::string>());
}
void read(std::string_view key, const json& v, Architecture& out) {
  if (!v.is_string()) type_error(key, "a string", v);
  const auto s = v.get<std::string>();
  if (s == "mlp")
    out = Architecture::kMlp;
  else if (s == "tabular")
    out = Architecture::kTabular;
  else
    throw ConfigError(fmt::format("{}: unknown architecture '{}' (expected mlp or tabular)", key, s));
}
void read(std::string_view key, const json& v, std::vector<std::uint64_t>& out) {
  if (!v.is_array()) type_error(key, "an array of integers", v);
  out.clear();
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(read_integer<std::uint64_t>(fmt::format("{}[{}]", key, i), v[i]));
}

// ---- field -> json ----------------------------------------------------------

json write(const Algorithm& a) { return std::string(to_string(a)); }
json write(const Architecture& a) { return std::string(to_string(a)); }
template <typename T>
json write(const T& x) {
  return x;
}

std::set<std::string> leaf_keys() {
  std::set<std::string> keys;
  ExperimentConfig c;
  visit_fields(c, [&](std::string_view key, auto&) { keys.emplace(key); });
  return keys;
}

void check_keys(const json& j, const std::string& prefix, const std::set<std::string>& leaves) {
  if (!j.is_object())
    throw ConfigError(fmt::format("{}: expected an object", prefix.empty() ? "<root>" : prefix));
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (prefix.empty() && k == "extends") continue;
    if (leaves.count(key)) continue;
    const auto group = leaves.lower_bound(key + ".");
    if (group != leaves.end() && group->rfind(key + ".", 0) == 0) {
      check_keys(v, key, leaves);
      continue;
    }
    throw ConfigError(fmt::format("{}: unknown configuration key", key));
  }
}

// Applies every leaf present in `j` onto `c`.
void apply_json(ExperimentConfig& c, const json& j) {
  static const std::set<std::string> leaves = leaf_keys();
  check_keys(j, "", leaves);
  visit_fields(c, [&](std::string_view key, auto& field) {
    const auto ptr = pointer(key);
    if (j.contains(ptr)) read(key, j.at(ptr), field);
  });
}

json parse_value(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) return json(text);  // bare strings need no quotes
  return v;
}

void apply_override(ExperimentConfig& c, std::string_view key, const std::string& value,
                    std::string_view origin) {
  static const std::set<std::string> leaves = leaf_keys();
  const std::string k(key);
  if (!leaves.count(k))
    throw ConfigError(fmt::format("{}: unknown configuration key (from {})", k, origin));
  json j;
  j[pointer(k)] = parse_value(value);
  apply_json(c, j);
}

ExperimentConfig load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("config: cannot open '{}'", path));
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config: {} is not valid JSON: {}", path, e.what()));
  }
  if (!j.is_object()) throw ConfigError(fmt::format("config: {} must hold a JSON object", path));
  ExperimentConfig c;
  if (j.contains("extends")) {
    if (!j["extends"].is_string()) type_error("extends", "a preset name", j["extends"]);
    c = preset(j["extends"].get<std::string>());
  }
  apply_json(c, j);
  if (!j.contains("name")) c.name = std::filesystem::path(path).stem().string();
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto need = [](bool ok, std::string_view key, std::string_view what) {
    if (!ok) throw ConfigError(fmt::format("{}: {}", key, what));
  };
  need(!name.empty(), "name", "must not be empty");
  need(!seeds.empty(), "seeds", "must list at least one seed");
  need(!output_dir.empty(), "output_dir", "must not be empty");
  need(checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
  need(workers >= 1, "workers", "must be >= 1");
  env.validate();
  need(env.difficulty.num_operands <= 64, "env.num_operands", "must be <= 64");
  need(model.window >= 1, "model.window", "must be >= 1");
  need(model.shape.embed_dim >= 1, "model.embed_dim", "must be >= 1");
  need(model.shape.hidden_dim >= 1, "model.hidden_dim", "must be >= 1");
  need(model.init_scale >= 0.0, "model.init_scale", "must be >= 0");
  need(tasks.train >= 1, "tasks.train", "must be >= 1");
  need(tasks.validation >= 1, "tasks.validation", "must be >= 1");
  need(tasks.test >= 1, "tasks.test", "must be >= 1");
  need(reference_checkpoint.empty() || algorithm != Algorithm::kSft, "reference_checkpoint",
       "cannot be combined with algorithm sft");
  need(!reference_checkpoint.empty() || tasks.sft >= 1, "tasks.sft",
       "must be >= 1 unless reference_checkpoint is set");
  need(sft.epochs >= 0, "sft.epochs", "must be >= 0");
  need(sft.batch_size >= 1, "sft.batch_size", "must be >= 1");
  need(sft.lr > 0.0, "sft.lr", "must be > 0");
  need(algorithm == Algorithm::kSft || model.architecture == Architecture::kMlp ||
           algorithm != Algorithm::kPpo,
       "model.architecture", "ppo needs an mlp policy for its value network");
  try {
    ppo.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("ppo.{}", e.what()));
  }
  need(restem.iterations >= 1, "restem.iterations", "must be >= 1");
  need(restem.train_prompts >= 0, "restem.train_prompts", "must be >= 0");
  need(restem.samples_per_prompt >= 1, "restem.samples_per_prompt", "must be >= 1");
  need(restem.epochs >= 1, "restem.epochs", "must be >= 1");
  need(restem.batch_size >= 1, "restem.batch_size", "must be >= 1");
  need(restem.lr > 0.0, "restem.lr", "must be > 0");
  need(restem.temperature > 0.0, "restem.temperature", "must be > 0");
  need(restem.eval_rounds >= 1, "restem.eval_rounds", "must be >= 1");
  need(dpo.train_prompts >= 0, "dpo.train_prompts", "must be >= 0");
  need(dpo.samples_per_prompt >= 2, "dpo.samples_per_prompt", "must be >= 2");
  need(dpo.epochs >= 0, "dpo.epochs", "must be >= 0");
  need(dpo.batch_size >= 1, "dpo.batch_size", "must be >= 1");
  need(dpo.lr > 0.0, "dpo.lr", "must be > 0");
  need(dpo.beta > 0.0, "dpo.beta", "must be > 0");
  need(dpo.lambda_p > 0.0, "dpo.lambda_p", "must be > 0");
  need(dpo.temperature > 0.0, "dpo.temperature", "must be > 0");
  need(dpo.eval_rounds >= 1, "dpo.eval_rounds", "must be >= 1");
}

json to_json(const ExperimentConfig& config) {
  json j = json::object();
  ExperimentConfig c = config;
  visit_fields(c, [&](std::string_view key, auto& field) { j[pointer(key)] = write(field); });
  return j;
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  if (j.is_object() && j.contains("extends")) {
    if (!j["extends"].is_string()) type_error("extends", "a preset name", j["extends"]);
    c = preset(j["extends"].get<std::string>());
  }
  apply_json(c, j);
  return c;
}

std::vector<std::string> preset_names() {
  return {"vineppo_default", "vineppo_k3",  "vineppo_k1", "ppo_default",
          "restem_default",  "dpo_positive_default", "sft_default", "tiny_vineppo",
          "tiny_ppo"};
}

bool is_preset(std::string_view name) {
  for (const auto& p : preset_names())
    if (p == name) return true;
  return false;
}

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig c;
  c.name = std::string(name);
  if (name == "vineppo_default") return c;
  if (name == "vineppo_k3") {
    c.ppo.mc_rollouts = 3;
    return c;
  }
  if (name == "vineppo_k1") {
    c.ppo.mc_rollouts = 1;
    return c;
  }
  if (name == "ppo_default") {
    c.algorithm = Algorithm::kPpo;
    return c;
  }
  if (name == "restem_default") {
    c.algorithm = Algorithm::kRestem;
    return c;
  }
  if (name == "dpo_positive_default") {
    c.algorithm = Algorithm::kDpoPositive;
    return c;
  }
  if (name == "sft_default") {
    c.algorithm = Algorithm::kSft;
    return c;
  }
  if (name == "tiny_vineppo" || name == "tiny_ppo") {
    c.algorithm = name == "tiny_ppo" ? Algorithm::kPpo : Algorithm::kVineppo;
    c.env = EnvConfig::tiny();
    c.model.window = 6;
    c.model.shape = {8, 32};
    c.tasks = {256, 256, 64, 64, 20};
    c.sft = {20, 16, 3e-3, 3};
    c.ppo.iterations = 10;
    c.ppo.prompts_per_iteration = 8;
    c.ppo.samples_per_prompt = 4;
    c.ppo.minibatch_size = 16;
    c.ppo.eval_rounds = 4;
    c.ppo.eval_train_tasks = 32;
    c.ppo.audit_every = 5;
    c.ppo.audit_trajectories = 8;
    c.ppo.audit_top_action_trials = 8;
    return c;
  }
  throw ConfigError(fmt::format("config: '{}' is neither a preset nor a readable file", name));
}

std::map<std::string, std::string> vinelab_environment() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    std::string_view kv(*e);
    if (kv.rfind(kEnvPrefix, 0) != 0) continue;
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    out.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return out;
}

ExperimentConfig resolve_config(const ConfigSource& source) {
  ExperimentConfig c;
  if (source.config.empty())
    c = preset("vineppo_default");
  else if (is_preset(source.config))
    c = preset(source.config);
  else if (std::filesystem::exists(source.config))
    c = load_file(source.config);
  else
    c = preset(source.config);  // throws with a clear message

  for (const auto& [var, value] : source.environment) {
    if (var.rfind(kEnvPrefix, 0) != 0) continue;
    std::string key;
    const std::string rest = var.substr(kEnvPrefix.size());
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (rest.compare(i, 2, "__") == 0) {
        key += '.';
        ++i;
      } else {
        key += static_cast<char>(std::tolower(static_cast<unsigned char>(rest[i])));
      }
    }
    apply_override(c, key, value, var);
  }
  for (const auto& ov : source.overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(fmt::format("override '{}' must look like key=value", ov));
    apply_override(c, ov.substr(0, eq), ov.substr(eq + 1), "--set");
  }
  c.validate();
  return c;
}

}  // namespace vinelab
