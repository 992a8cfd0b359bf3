// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_ROLLOUT_HPP_
#define VINELAB_ROLLOUT_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "vinelab/env.hpp"
#include "vinelab/policy.hpp"
#include "vinelab/rng.hpp"

namespace vinelab {

// Passing kGreedy as a temperature decodes with argmax instead of sampling.
inline constexpr double kGreedy = 0.0;

// Samples an episode from the initial state. Behavior log-probs are recorded
// at the sampling temperature (0 for greedy decoding).
Trajectory sample_trajectory(const Environment& env, const PolicySnapshot& policy,
                             const TaskInstance& task, double temperature, Rng& rng);

// Continues from `generated` (non-terminal) to a terminal state and returns
// the episode return. Used by the Monte Carlo value estimator.
double rollout_return(const Environment& env, const PolicySnapshot& policy,
                      const TaskInstance& task, std::span<const Token> generated,
                      double temperature, Rng& rng, std::size_t* tokens = nullptr);

// Samples tokens from `generated` until the current reasoning step closes
// (SEP, EOS, or the horizon). Returns only the new tokens.
std::vector<Token> sample_step(const Environment& env, const PolicySnapshot& policy,
                               const TaskInstance& task, std::span<const Token> generated,
                               double temperature, Rng& rng);

// Mean reward over `rounds` decodes of every task; round r of task i uses
// the stream derive_seed(seed, {r, i}).
double evaluate_accuracy(const Environment& env, const PolicySnapshot& policy,
                         std::span<const TaskInstance> tasks, double temperature, int rounds,
                         std::uint64_t seed, int workers = 1);

}  // namespace vinelab

#endif  // VINELAB_ROLLOUT_HPP_
