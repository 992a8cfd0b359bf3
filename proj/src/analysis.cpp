// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/analysis.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "vinelab/errors.hpp"
#include "vinelab/rollout.hpp"

namespace vinelab {

ValueEstimate ground_truth_value(const Environment& env, const PolicySnapshot& policy,
                                 const TaskInstance& task, const TokenMdpState& state,
                                 double temperature, std::uint64_t seed,
                                 std::uint64_t leaf_budget) {
  try {
    return exact_value(env, policy, task, state, temperature, leaf_budget);
  } catch (const OracleUnavailable&) {
    return mc_value(env, policy, task, state, kGroundTruthRollouts, temperature, seed);
  }
}

double value_mae(std::span<const ValueAuditRecord> records) {
  if (records.empty()) throw ContractViolation("value_mae on empty records");
  double sum = 0.0;
  for (const auto& r : records) sum += std::abs(r.predicted - r.truth);
  return sum / static_cast<double>(records.size());
}

double value_accuracy(std::span<const ValueAuditRecord> records, double threshold) {
  if (records.empty()) throw ContractViolation("value_accuracy on empty records");
  std::size_t hits = 0;
  for (const auto& r : records)
    if (std::abs(r.predicted - r.truth) <= threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

namespace {

void judge(TopActionTrial& trial) {
  const double best = *std::max_element(trial.truth.begin(), trial.truth.end());
  std::size_t tied = 0;
  for (double t : trial.truth)
    if (t >= best - kTieBand) ++tied;
  const std::size_t pick = static_cast<std::size_t>(
      std::max_element(trial.predicted.begin(), trial.predicted.end()) - trial.predicted.begin());
  trial.correct = trial.truth[pick] >= best - kTieBand;
  trial.informative = tied == 1;
}

}  // namespace

TopActionTrial top_action_trial(const Environment& env, const PolicySnapshot& policy,
                                const TaskInstance& task, const TokenMdpState& state,
                                const StateEstimator& estimator, double temperature,
                                std::uint64_t seed, int max_retries) {
  if (state.terminal) throw ContractViolation("top-action trial from a terminal state");
  TopActionTrial trial;
  trial.base = state;
  Rng rng(derive_seed(seed, {0x5e1ULL}));
  int retries = 0;
  while (static_cast<int>(trial.candidates.size()) < kTopActionCandidates) {
    auto step = sample_step(env, policy, task, state.generated, temperature, rng);
    const bool duplicate =
        std::find(trial.candidates.begin(), trial.candidates.end(), step) != trial.candidates.end();
    if (duplicate && retries < max_retries) {
      ++retries;
      continue;
    }
    trial.candidates.push_back(std::move(step));
  }
  for (std::size_t c = 0; c < trial.candidates.size(); ++c) {
    TokenMdpState next = state;
    for (Token a : trial.candidates[c]) next = env.transition(next, a);
    trial.truth.push_back(
        ground_truth_value(env, policy, task, next, temperature, derive_seed(seed, {1, c})).value);
    trial.predicted.push_back(estimator(next, derive_seed(seed, {2, c})));
  }
  judge(trial);
  return trial;
}

TopActionTrial rescore_trial(const TopActionTrial& trial, const std::vector<double>& predicted) {
  if (predicted.size() != trial.candidates.size())
    throw ContractViolation("one prediction per candidate is required");
  TopActionTrial out = trial;
  out.predicted = predicted;
  judge(out);
  return out;
}

TopActionSummary summarize_top_action(std::span<const TopActionRecord> records) {
  TopActionSummary s;
  std::size_t hits = 0;
  for (const auto& r : records) {
    ++s.trials;
    if (!r.informative) continue;
    ++s.informative;
    if (r.correct) ++hits;
  }
  if (s.informative > 0) {
    s.accuracy = static_cast<double>(hits) / static_cast<double>(s.informative);
    s.stderr_chance = std::sqrt(0.2 * 0.8 / static_cast<double>(s.informative));
  }
  return s;
}

std::vector<PositionBucket> error_by_step_position(std::span<const ValueAuditRecord> records,
                                                   int buckets) {
  std::vector<double> sum(static_cast<std::size_t>(buckets), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(buckets), 0);
  for (const auto& r : records) {
    if (r.step_count <= 0) throw ContractViolation("audit record without step count");
    const double pos = static_cast<double>(r.step_index) / r.step_count;
    const int b = std::clamp(static_cast<int>(pos * buckets), 0, buckets - 1);
    sum[static_cast<std::size_t>(b)] += std::abs(r.predicted - r.truth);
    ++count[static_cast<std::size_t>(b)];
  }
  std::vector<PositionBucket> out;
  for (int b = 0; b < buckets; ++b) {
    const auto i = static_cast<std::size_t>(b);
    if (count[i] == 0) continue;
    out.push_back({static_cast<double>(b) / buckets, static_cast<double>(b + 1) / buckets,
                   sum[i] / static_cast<double>(count[i]), count[i]});
  }
  return out;
}

std::vector<KlPoint> accuracy_vs_kl_curve(std::span<const IterationMetrics> metrics) {
  std::vector<KlPoint> curve;
  curve.reserve(metrics.size());
  for (const auto& m : metrics) curve.push_back({m.iteration, m.exact_kl, m.test_acc});
  std::stable_sort(curve.begin(), curve.end(),
                   [](const KlPoint& a, const KlPoint& b) { return a.iteration < b.iteration; });
  return curve;
}

double accuracy_at_kl(std::span<const KlPoint> curve, double kl) {
  if (curve.empty()) throw ContractViolation("empty KL curve");
  std::vector<KlPoint> sorted(curve.begin(), curve.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const KlPoint& a, const KlPoint& b) { return a.kl < b.kl; });
  if (kl <= sorted.front().kl) return sorted.front().accuracy;
  if (kl >= sorted.back().kl) return sorted.back().accuracy;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (kl <= sorted[i].kl) {
      const auto& lo = sorted[i - 1];
      const auto& hi = sorted[i];
      if (hi.kl == lo.kl) return 0.5 * (lo.accuracy + hi.accuracy);
      const double w = (kl - lo.kl) / (hi.kl - lo.kl);
      return lo.accuracy + w * (hi.accuracy - lo.accuracy);
    }
  }
  return sorted.back().accuracy;
}

KlComparison compare_at_matched_kl(std::span<const KlPoint> a, std::span<const KlPoint> b,
                                   int points, double tolerance) {
  if (a.empty() || b.empty()) throw ContractViolation("KL comparison needs two non-empty curves");
  auto range = [](std::span<const KlPoint> c) {
    double lo = c.front().kl, hi = c.front().kl;
    for (const auto& p : c) {
      lo = std::min(lo, p.kl);
      hi = std::max(hi, p.kl);
    }
    return std::pair{lo, hi};
  };
  const auto [alo, ahi] = range(a);
  const auto [blo, bhi] = range(b);
  const double lo = std::max(alo, blo), hi = std::min(ahi, bhi);
  KlComparison out;
  if (hi < lo) return out;
  std::size_t ok = 0;
  for (int i = 0; i < points; ++i) {
    const double x = points == 1 ? lo : lo + (hi - lo) * i / (points - 1);
    out.grid.push_back(x);
    out.a.push_back(accuracy_at_kl(a, x));
    out.b.push_back(accuracy_at_kl(b, x));
    if (out.a.back() >= out.b.back() - tolerance) ++ok;
  }
  out.fraction_a_not_worse = static_cast<double>(ok) / points;
  return out;
}

std::optional<long long> steps_to_target(std::span<const IterationMetrics> metrics,
                                         double target) {
  for (const auto& m : metrics)
    if (m.test_acc >= target) return m.gradient_steps;
  return std::nullopt;
}

void write_mae_csv(std::ostream& out, std::span<const ValueAuditRecord> records) {
  std::map<std::pair<int, std::string>, std::vector<ValueAuditRecord>> groups;
  for (const auto& r : records) groups[{r.iteration, std::string(to_string(r.method))}].push_back(r);
  out << "iteration,method,mae,count\n";
  for (const auto& [key, recs] : groups)
    out << fmt::format("{},{},{:.6f},{}\n", key.first, key.second, value_mae(recs), recs.size());
}

void write_threshold_acc_csv(std::ostream& out, std::span<const ValueAuditRecord> records) {
  std::map<std::pair<int, std::string>, std::vector<ValueAuditRecord>> groups;
  for (const auto& r : records) groups[{r.iteration, std::string(to_string(r.method))}].push_back(r);
  out << "iteration,method,accuracy,count\n";
  for (const auto& [key, recs] : groups)
    out << fmt::format("{},{},{:.6f},{}\n", key.first, key.second, value_accuracy(recs),
                       recs.size());
}

void write_profile_csv(std::ostream& out, std::span<const ValueAuditRecord> records) {
  std::map<std::string, std::vector<ValueAuditRecord>> groups;
  for (const auto& r : records) groups[std::string(to_string(r.method))].push_back(r);
  out << "method,position_lo,position_hi,mae,count\n";
  for (const auto& [method, recs] : groups)
    for (const auto& b : error_by_step_position(recs))
      out << fmt::format("{},{:.1f},{:.1f},{:.6f},{}\n", method, b.lo, b.hi, b.mae, b.count);
}

void write_top_action_csv(std::ostream& out, std::span<const TopActionRecord> records) {
  std::map<std::pair<int, std::string>, std::vector<TopActionRecord>> groups;
  for (const auto& r : records) groups[{r.iteration, std::string(to_string(r.method))}].push_back(r);
  out << "iteration,method,trials,informative,accuracy\n";
  for (const auto& [key, recs] : groups) {
    const auto s = summarize_top_action(recs);
    out << fmt::format("{},{},{},{},{:.6f}\n", key.first, key.second, s.trials, s.informative,
                       s.accuracy);
  }
}

void write_kl_csv(std::ostream& out, std::span<const KlPoint> curve) {
  out << "iteration,kl,accuracy\n";
  for (const auto& p : curve) out << fmt::format("{},{:.8f},{:.6f}\n", p.iteration, p.kl, p.accuracy);
}

}  // namespace vinelab
