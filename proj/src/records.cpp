// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/records.hpp"

#include <fmt/format.h>

#include <istream>
#include <json.hpp>

#include "vinelab/errors.hpp"

namespace vinelab {

using nlohmann::json;

namespace {

ValueMethod parse_method(const std::string& s) {
  if (s == "net") return ValueMethod::kNet;
  if (s == "mc") return ValueMethod::kMc;
  if (s == "exact") return ValueMethod::kExact;
  throw FormatError(fmt::format("unknown value method '{}'", s));
}

template <typename T>
T field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end())
    throw FormatError(fmt::format("line {}: missing field '{}'", line, key));
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw FormatError(fmt::format("line {}: field '{}' has the wrong type", line, key));
  }
}

json parse_line(const std::string& line, std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("line {}: {}", line_no, e.what()));
  }
}

}  // namespace

std::string to_json_line(const IterationMetrics& m) {
  json j;
  j["iteration"] = m.iteration;
  j["gradient_steps"] = m.gradient_steps;
  j["episodes"] = m.episodes;
  j["rollout_tokens"] = m.rollout_tokens;
  j["mc_rollouts"] = m.mc_rollouts;
  j["mc_tokens"] = m.mc_tokens;
  j["train_acc"] = m.train_acc;
  j["test_acc"] = m.test_acc;
  j["test_acc_greedy"] = m.test_acc_greedy;
  j["val_acc"] = m.val_acc;
  j["exact_kl"] = m.exact_kl;
  j["batch_reward"] = m.batch_reward;
  return j.dump();
}

std::string to_json_line(const ValueAuditRecord& r) {
  json j;
  j["type"] = "value";
  j["iteration"] = r.iteration;
  j["state"] = r.state;
  j["step_index"] = r.step_index;
  j["step_count"] = r.step_count;
  j["truth"] = r.truth;
  j["predicted"] = r.predicted;
  j["method"] = std::string(to_string(r.method));
  j["truth_method"] = std::string(to_string(r.truth_method));
  j["K"] = r.samples;
  j["seed"] = r.seed;
  return j.dump();
}

std::string to_json_line(const TopActionRecord& r) {
  json j;
  j["type"] = "top_action";
  j["iteration"] = r.iteration;
  j["state"] = r.state;
  j["method"] = std::string(to_string(r.method));
  j["truth"] = r.truth;
  j["predicted"] = r.predicted;
  j["correct"] = r.correct;
  j["informative"] = r.informative;
  return j.dump();
}

std::vector<IterationMetrics> read_metrics(std::istream& in) {
  std::vector<IterationMetrics> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const json j = parse_line(line, n);
    IterationMetrics m;
    m.iteration = field<int>(j, "iteration", n);
    m.gradient_steps = field<long long>(j, "gradient_steps", n);
    m.episodes = field<long long>(j, "episodes", n);
    m.rollout_tokens = field<long long>(j, "rollout_tokens", n);
    m.mc_rollouts = field<long long>(j, "mc_rollouts", n);
    m.mc_tokens = field<long long>(j, "mc_tokens", n);
    m.train_acc = field<double>(j, "train_acc", n);
    m.test_acc = field<double>(j, "test_acc", n);
    m.test_acc_greedy = field<double>(j, "test_acc_greedy", n);
    m.val_acc = field<double>(j, "val_acc", n);
    m.exact_kl = field<double>(j, "exact_kl", n);
    m.batch_reward = field<double>(j, "batch_reward", n);
    out.push_back(m);
  }
  return out;
}

AuditLog read_audit(std::istream& in) {
  AuditLog log;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const json j = parse_line(line, n);
    const auto type = field<std::string>(j, "type", n);
    if (type == "value") {
      ValueAuditRecord r;
      r.iteration = field<int>(j, "iteration", n);
      r.state = field<std::string>(j, "state", n);
      r.step_index = field<int>(j, "step_index", n);
      r.step_count = field<int>(j, "step_count", n);
      r.truth = field<double>(j, "truth", n);
      r.predicted = field<double>(j, "predicted", n);
      r.method = parse_method(field<std::string>(j, "method", n));
      r.truth_method = parse_method(field<std::string>(j, "truth_method", n));
      r.samples = field<int>(j, "K", n);
      r.seed = field<unsigned long long>(j, "seed", n);
      log.values.push_back(std::move(r));
    } else if (type == "top_action") {
      TopActionRecord r;
      r.iteration = field<int>(j, "iteration", n);
      r.state = field<std::string>(j, "state", n);
      r.method = parse_method(field<std::string>(j, "method", n));
      r.truth = field<std::vector<double>>(j, "truth", n);
      r.predicted = field<std::vector<double>>(j, "predicted", n);
      r.correct = field<bool>(j, "correct", n);
      r.informative = field<bool>(j, "informative", n);
      log.top_actions.push_back(std::move(r));
    } else {
      throw FormatError(fmt::format("line {}: unknown audit record type '{}'", n, type));
    }
  }
  return log;
}

}  // namespace vinelab
