// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "vinelab/analysis.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/rollout.hpp"

using namespace vinelab;

namespace {

ValueAuditRecord rec(double truth, double predicted, int index = 0, int count = 1) {
  ValueAuditRecord r;
  r.truth = truth;
  r.predicted = predicted;
  r.step_index = index;
  r.step_count = count;
  return r;
}

}  // namespace

TEST_CASE("mae and threshold accuracy") {
  const std::vector<ValueAuditRecord> rs{rec(0.5, 0.5), rec(0.5, 0.6), rec(0.2, 0.16), rec(1.0, 0.0)};
  CHECK(value_mae(rs) == doctest::Approx((0.0 + 0.1 + 0.04 + 1.0) / 4));
  CHECK(value_accuracy(rs) == doctest::Approx(0.5));
  CHECK_THROWS_AS(value_mae(std::vector<ValueAuditRecord>{}), ContractViolation);
}

TEST_CASE("error profile buckets by relative step position") {
  const std::vector<ValueAuditRecord> rs{rec(0.0, 0.2, 0, 4), rec(0.0, 0.4, 3, 4)};
  const auto buckets = error_by_step_position(rs, 4);
  REQUIRE(buckets.size() == 2);
  CHECK(buckets[0].lo == 0.0);
  CHECK(buckets[0].mae == doctest::Approx(0.2));
  CHECK(buckets[1].lo == 0.75);
  CHECK(buckets[1].mae == doctest::Approx(0.4));
}

TEST_CASE("top-action judging and the tie band") {
  TopActionTrial t;
  t.candidates.resize(5);
  t.truth = {0.1, 0.9, 0.3, 0.2, 0.5};
  auto r = rescore_trial(t, {0.0, 1.0, 0.0, 0.0, 0.0});
  CHECK(r.correct);
  CHECK(r.informative);
  r = rescore_trial(t, {1.0, 0.0, 0.0, 0.0, 0.0});
  CHECK_FALSE(r.correct);
  t.truth = {0.1, 0.9, 0.895, 0.2, 0.5};  // two candidates inside the band
  r = rescore_trial(t, {0.0, 0.0, 1.0, 0.0, 0.0});
  CHECK(r.correct);
  CHECK_FALSE(r.informative);
  CHECK_THROWS_AS(rescore_trial(t, {1.0}), ContractViolation);
}

TEST_CASE("a perfect estimator always picks the best candidate") {
  const Environment env(EnvConfig::tiny());
  const auto tasks = enumerate_tasks(env.config().difficulty);
  const auto policy = PolicySnapshot::mlp(env.vocab(), 6, MlpShape{4, 8}, 2, 1.0);
  for (std::uint64_t i = 0; i < 8; ++i) {
    const TaskInstance& task = tasks[i % tasks.size()];
    const StateEstimator oracle = [&](const TokenMdpState& s, std::uint64_t) {
      return exact_value(env, policy, task, s, 1.0).value;
    };
    const auto t = top_action_trial(env, policy, task, env.initial_state(task), oracle, 1.0, i);
    CHECK(t.candidates.size() == 5);
    CHECK(t.correct);
  }
}

TEST_CASE("summary counts informative trials only") {
  std::vector<TopActionRecord> rs(4);
  rs[0].informative = rs[1].informative = rs[2].informative = true;
  rs[0].correct = rs[3].correct = true;
  const auto s = summarize_top_action(rs);
  CHECK(s.trials == 4);
  CHECK(s.informative == 3);
  CHECK(s.accuracy == doctest::Approx(1.0 / 3));
}

TEST_CASE("accuracy at matched kl interpolates and clamps") {
  const std::vector<KlPoint> c{{0, 0.0, 0.5}, {1, 0.1, 0.6}, {2, 0.3, 0.7}};
  CHECK(accuracy_at_kl(c, 0.05) == doctest::Approx(0.55));
  CHECK(accuracy_at_kl(c, 0.2) == doctest::Approx(0.65));
  CHECK(accuracy_at_kl(c, -1.0) == 0.5);
  CHECK(accuracy_at_kl(c, 9.0) == 0.7);
  const auto same = compare_at_matched_kl(c, c);
  CHECK(same.fraction_a_not_worse == 1.0);
  const std::vector<KlPoint> worse{{0, 0.0, 0.4}, {1, 0.3, 0.5}};
  CHECK(compare_at_matched_kl(worse, c).fraction_a_not_worse == 0.0);
}

TEST_CASE("steps to target") {
  std::vector<IterationMetrics> ms(3);
  for (int i = 0; i < 3; ++i) {
    ms[static_cast<std::size_t>(i)].gradient_steps = 8 * i;
    ms[static_cast<std::size_t>(i)].test_acc = 0.5 + 0.1 * i;
  }
  CHECK(steps_to_target(ms, 0.55) == 8);
  CHECK_FALSE(steps_to_target(ms, 0.9).has_value());
}

TEST_CASE("ground truth falls back to sampling when enumeration is too large") {
  const Environment env(EnvConfig::default_env());
  const TaskInstance task = env.generate_task(1);
  const auto policy = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{4, 8}, 1);
  const auto v = ground_truth_value(env, policy, task, env.initial_state(task), 1.0, 3);
  CHECK(v.method == ValueMethod::kMc);
  CHECK(v.samples == kGroundTruthRollouts);
  const Environment tiny(EnvConfig::tiny());
  const TaskInstance t2 = enumerate_tasks(tiny.config().difficulty)[0];
  const auto p2 = PolicySnapshot::mlp(tiny.vocab(), 6, MlpShape{4, 8}, 1);
  CHECK(ground_truth_value(tiny, p2, t2, tiny.initial_state(t2), 1.0, 3).method == ValueMethod::kExact);
}

TEST_CASE("csv writers emit headers") {
  std::ostringstream a, b;
  write_mae_csv(a, std::vector<ValueAuditRecord>{rec(0.5, 0.4)});
  CHECK(a.str().rfind("iteration,method,mae,count\n", 0) == 0);
  write_kl_csv(b, std::vector<KlPoint>{{0, 0.0, 0.5}});
  CHECK(b.str() == "iteration,kl,accuracy\n0,0.00000000,0.500000\n");
}
