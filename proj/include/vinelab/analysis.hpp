// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_ANALYSIS_HPP_
#define VINELAB_ANALYSIS_HPP_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "vinelab/env.hpp"
#include "vinelab/policy.hpp"
#include "vinelab/records.hpp"
#include "vinelab/value.hpp"

namespace vinelab {

inline constexpr int kGroundTruthRollouts = 256;
inline constexpr double kValueThreshold = 0.05;
inline constexpr double kTieBand = 0.01;
inline constexpr int kTopActionCandidates = 5;

// Exact enumeration when the oracle budget allows, otherwise a 256-rollout
// Monte Carlo estimate; `method` and `samples` tell which.
ValueEstimate ground_truth_value(const Environment& env, const PolicySnapshot& policy,
                                 const TaskInstance& task, const TokenMdpState& state,
                                 double temperature, std::uint64_t seed,
                                 std::uint64_t leaf_budget = kDefaultLeafBudget);

double value_mae(std::span<const ValueAuditRecord> records);
// Fraction with |predicted - truth| <= threshold.
double value_accuracy(std::span<const ValueAuditRecord> records,
                      double threshold = kValueThreshold);

// (state, seed) -> value
using StateEstimator = std::function<double(const TokenMdpState&, std::uint64_t)>;

struct TopActionTrial {
  TokenMdpState base;
  std::vector<std::vector<Token>> candidates;  // complete next steps
  std::vector<double> truth;
  std::vector<double> predicted;
  bool correct = false;
  bool informative = false;
};

// Samples five next reasoning steps from `state` (distinct when possible
// within `max_retries` resamples), scores the resulting states with both
// `estimator` and the ground truth, and checks whether the estimator's
// argmax lands in the ground-truth tie band (max - 0.01).
TopActionTrial top_action_trial(const Environment& env, const PolicySnapshot& policy,
                                const TaskInstance& task, const TokenMdpState& state,
                                const StateEstimator& estimator, double temperature,
                                std::uint64_t seed, int max_retries = 20);

// Re-scores a trial's candidates with another estimator, keeping the
// ground truth (used to compare estimators on identical candidates).
TopActionTrial rescore_trial(const TopActionTrial& trial, const std::vector<double>& predicted);

struct TopActionSummary {
  std::size_t trials = 0;
  std::size_t informative = 0;
  double accuracy = 0.0;  // over informative trials (chance = 1/5)
  double stderr_chance = 0.0;  // sqrt(0.2 * 0.8 / informative)
};
TopActionSummary summarize_top_action(std::span<const TopActionRecord> records);

struct PositionBucket {
  double lo = 0.0, hi = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};
// MAE by decile of step_index / step_count; empty deciles are omitted.
std::vector<PositionBucket> error_by_step_position(std::span<const ValueAuditRecord> records,
                                                   int buckets = 10);

struct KlPoint {
  int iteration = 0;
  double kl = 0.0;
  double accuracy = 0.0;
};
// Ordered by iteration.
std::vector<KlPoint> accuracy_vs_kl_curve(std::span<const IterationMetrics> metrics);

// Accuracy at `kl` by linear interpolation over the curve sorted by KL.
double accuracy_at_kl(std::span<const KlPoint> curve, double kl);

struct KlComparison {
  std::vector<double> grid;
  std::vector<double> a, b;
  double fraction_a_not_worse = 0.0;  // a >= b - tolerance
};
// Compares two curves on `points` evenly spaced KL values over their
// shared KL range.
KlComparison compare_at_matched_kl(std::span<const KlPoint> a, std::span<const KlPoint> b,
                                   int points = 20, double tolerance = 0.01);

// First gradient-step count whose test accuracy reaches `target`.
std::optional<long long> steps_to_target(std::span<const IterationMetrics> metrics, double target);

// CSV tables.
void write_mae_csv(std::ostream& out, std::span<const ValueAuditRecord> records);
void write_threshold_acc_csv(std::ostream& out, std::span<const ValueAuditRecord> records);
void write_profile_csv(std::ostream& out, std::span<const ValueAuditRecord> records);
void write_top_action_csv(std::ostream& out, std::span<const TopActionRecord> records);
void write_kl_csv(std::ostream& out, std::span<const KlPoint> curve);

}  // namespace vinelab

#endif  // VINELAB_ANALYSIS_HPP_
