// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_ADVANTAGE_HPP_
#define VINELAB_ADVANTAGE_HPP_

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "vinelab/env.hpp"
#include "vinelab/policy.hpp"
#include "vinelab/value.hpp"

namespace vinelab {

inline constexpr std::size_t kMaxStepTokens = 100;

// Half-open token range [begin, end) of a trajectory's actions.
struct StepRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const StepRange&, const StepRange&) = default;
};

struct StepSegmentation {
  std::vector<StepRange> steps;
};

enum class AdvantageMethod { kGae, kMc };

std::string_view to_string(AdvantageMethod method);

struct AdvantageRecord {
  AdvantageMethod method = AdvantageMethod::kMc;
  std::vector<double> advantages;  // one per token
  // gae: per-token values V(s_t); mc: per-step boundary values V(s_begin).
  std::vector<double> values;
  double lambda = 1.0;
  double gamma = 1.0;
  int k = 0;
};

// Splits after every SEP; steps longer than `max_step` tokens are cut
// greedily at that length.
StepSegmentation segment_steps(const Trajectory& trajectory, Token sep,
                               std::size_t max_step = kMaxStepTokens);

// Step-level advantages from values at step starts: for step i,
//   A_i = r_i + V(start of step i+1) - V(start of step i)
// with V = 0 past the end of the episode, broadcast to every token in the
// step. `boundary_values` holds V at each step's first state.
AdvantageRecord step_advantages(const Trajectory& trajectory, const StepSegmentation& segmentation,
                                std::span<const double> boundary_values);

// Monte Carlo advantages: each boundary value is a K-rollout estimate
// (computed once and shared by the two adjacent steps). Boundary i uses the
// stream derive_seed(seed, {i}).
AdvantageRecord mc_advantages(const Environment& env, const PolicySnapshot& policy,
                              const Trajectory& trajectory, const StepSegmentation& segmentation,
                              int k, double temperature, std::uint64_t seed,
                              std::size_t* rollout_tokens = nullptr);

// Generalized advantage estimation over per-token values V(s_0..s_{T-1});
// V(terminal) = 0.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        double lambda, double gamma);

AdvantageRecord gae_advantages(const ValueNet& valnet, const Trajectory& trajectory, double lambda,
                               double gamma = 1.0);

// Zero-mean, unit-variance over all tokens of the batch (std + 1e-8 in the
// denominator).
void normalize_advantages(std::span<AdvantageRecord> batch);

}  // namespace vinelab

#endif  // VINELAB_ADVANTAGE_HPP_
