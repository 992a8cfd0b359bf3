// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/advantage.hpp"

#include <cmath>

#include "vinelab/errors.hpp"

namespace vinelab {

std::string_view to_string(AdvantageMethod method) {
  return method == AdvantageMethod::kGae ? "gae" : "mc";
}

StepSegmentation segment_steps(const Trajectory& trajectory, Token sep, std::size_t max_step) {
  StepSegmentation seg;
  const std::size_t n = trajectory.length();
  std::size_t begin = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const bool closes = trajectory.actions[t] == sep || t + 1 == n || t + 1 - begin == max_step;
    if (closes) {
      seg.steps.push_back({begin, t + 1});
      begin = t + 1;
    }
  }
  return seg;
}

AdvantageRecord step_advantages(const Trajectory& trajectory, const StepSegmentation& segmentation,
                                std::span<const double> boundary_values) {
  const auto& steps = segmentation.steps;
  if (boundary_values.size() != steps.size())
    throw ContractViolation("one boundary value per step is required");
  AdvantageRecord rec;
  rec.method = AdvantageMethod::kMc;
  rec.values.assign(boundary_values.begin(), boundary_values.end());
  rec.advantages.assign(trajectory.length(), 0.0);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    double step_reward = 0.0;
    for (std::size_t t = steps[i].begin; t < steps[i].end; ++t) step_reward += trajectory.rewards[t];
    const double next = i + 1 < steps.size() ? boundary_values[i + 1] : 0.0;
    const double adv = step_reward + next - boundary_values[i];
    for (std::size_t t = steps[i].begin; t < steps[i].end; ++t) rec.advantages[t] = adv;
  }
  return rec;
}

AdvantageRecord mc_advantages(const Environment& env, const PolicySnapshot& policy,
                              const Trajectory& trajectory, const StepSegmentation& segmentation,
                              int k, double temperature, std::uint64_t seed,
                              std::size_t* rollout_tokens) {
  if (k < 1) throw ConfigError("mc advantages need K >= 1");
  std::vector<double> values;
  values.reserve(segmentation.steps.size());
  for (std::size_t i = 0; i < segmentation.steps.size(); ++i) {
    const std::size_t t = segmentation.steps[i].begin;
    TokenMdpState state{trajectory.task.prompt,
                        std::vector<Token>(trajectory.actions.begin(),
                                           trajectory.actions.begin() + static_cast<std::ptrdiff_t>(t)),
                        false};
    values.push_back(
        mc_value(env, policy, trajectory.task, state, k, temperature, derive_seed(seed, {i}),
                 rollout_tokens)
            .value);
  }
  AdvantageRecord rec = step_advantages(trajectory, segmentation, values);
  rec.k = k;
  return rec;
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        double lambda, double gamma) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("GAE lambda must lie in [0, 1]");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("GAE gamma must lie in [0, 1]");
  if (rewards.size() != values.size()) throw ContractViolation("rewards and values differ in length");
  const std::size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next = t + 1 < n ? values[t + 1] : 0.0;
    const double delta = rewards[t] + gamma * next - values[t];
    running = delta + gamma * lambda * running;
    adv[t] = running;
  }
  return adv;
}

AdvantageRecord gae_advantages(const ValueNet& valnet, const Trajectory& trajectory, double lambda,
                               double gamma) {
  AdvantageRecord rec;
  rec.method = AdvantageMethod::kGae;
  rec.lambda = lambda;
  rec.gamma = gamma;
  rec.values.reserve(trajectory.length());
  std::vector<Token> seq(trajectory.task.prompt);
  for (std::size_t t = 0; t < trajectory.length(); ++t) {
    rec.values.push_back(valnet.predict(seq));
    seq.push_back(trajectory.actions[t]);
  }
  rec.advantages = gae(trajectory.rewards, rec.values, lambda, gamma);
  return rec;
}

void normalize_advantages(std::span<AdvantageRecord> batch) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& rec : batch)
    for (double a : rec.advantages) {
      sum += a;
      ++count;
    }
  if (count < 2) throw ContractViolation("advantage normalization needs at least two tokens");
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const auto& rec : batch)
    for (double a : rec.advantages) sq += (a - mean) * (a - mean);
  const double std = std::sqrt(sq / static_cast<double>(count));
  for (auto& rec : batch)
    for (double& a : rec.advantages) a = (a - mean) / (std + 1e-8);
}

}  // namespace vinelab
