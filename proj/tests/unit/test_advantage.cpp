// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "vinelab/advantage.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/rollout.hpp"

using namespace vinelab;

namespace {

Trajectory make(std::vector<Token> actions, double reward) {
  Trajectory t;
  t.task.prompt = {1, 2};
  t.actions = std::move(actions);
  t.rewards.assign(t.actions.size(), 0.0);
  t.rewards.back() = reward;
  return t;
}

}  // namespace

TEST_CASE("steps end at separators and at the last token") {
  // 1 SEP 3 SEP 3 EOS with SEP=10, EOS=11
  const Trajectory t = make({1, 10, 3, 10, 3, 11}, 1.0);
  const auto seg = segment_steps(t, 10);
  REQUIRE(seg.steps.size() == 3);
  CHECK(seg.steps[0] == StepRange{0, 2});
  CHECK(seg.steps[1] == StepRange{2, 4});
  CHECK(seg.steps[2] == StepRange{4, 6});
  const auto capped = segment_steps(make({1, 2, 3, 4, 5}, 0.0), 10, 2);
  CHECK(capped.steps.size() == 3);
}

TEST_CASE("step advantages are shared by every token in the step") {
  const Trajectory t = make({1, 10, 3, 10, 3, 11}, 1.0);
  const auto seg = segment_steps(t, 10);
  const std::vector<double> v{0.5, 0.25, 0.75};
  const auto rec = step_advantages(t, seg, v);
  CHECK(rec.advantages == std::vector<double>{-0.25, -0.25, 0.5, 0.5, 0.25, 0.25});
  CHECK_THROWS_AS(step_advantages(t, seg, std::vector<double>{0.5}), ContractViolation);
}

TEST_CASE("gae recursion") {
  const std::vector<double> r{0.0, 0.0, 1.0};
  const std::vector<double> v{0.5, 0.25, 0.75};
  const auto a = gae(r, v, 0.5, 1.0);
  const double d2 = 1.0 - 0.75, d1 = 0.75 - 0.25, d0 = 0.25 - 0.5;
  CHECK(a[2] == doctest::Approx(d2));
  CHECK(a[1] == doctest::Approx(d1 + 0.5 * d2));
  CHECK(a[0] == doctest::Approx(d0 + 0.5 * (d1 + 0.5 * d2)));
  CHECK_THROWS_AS(gae(r, std::vector<double>{0.1}, 1.0, 1.0), ContractViolation);
}

TEST_CASE("normalization gives zero mean and unit variance over the batch") {
  std::vector<AdvantageRecord> batch(2);
  batch[0].advantages = {1.0, 2.0, 3.0};
  batch[1].advantages = {-4.0};
  normalize_advantages(batch);
  double sum = 0.0, sq = 0.0;
  for (const auto& r : batch)
    for (double a : r.advantages) {
      sum += a;
      sq += a * a;
    }
  CHECK(std::abs(sum) < 1e-12);
  CHECK(sq / 4 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("mc advantages with a deterministic policy are exact") {
  // A tabular policy with huge margins always replays the reference solution,
  // so every rollout returns 1 and all step advantages are 0.
  const Environment env(EnvConfig::tiny());
  const auto tasks = enumerate_tasks(env.config().difficulty);
  auto p = PolicySnapshot::tabular(env.vocab(), 16, enumerate_contexts(env, tasks, 16));
  std::vector<double> params(p.num_params(), 0.0);
  for (const auto& task : tasks) {
    std::vector<Token> seq = task.prompt;
    for (Token a : env.reference_solution(task)) {
      for (std::size_t r = 0; r < p.contexts().size(); ++r)
        if (p.contexts()[r] == p.context(seq)) params[r * 4 + static_cast<std::size_t>(a)] = 60.0;
      seq.push_back(a);
    }
  }
  p = p.with_params(params);
  Rng rng(1);
  const Trajectory t = sample_trajectory(env, p, tasks[3], 1.0, rng);
  CHECK(t.total_return() == 1.0);
  std::size_t tokens = 0;
  const auto rec = mc_advantages(env, p, t, segment_steps(t, env.vocab().sep()), 3, 1.0, 5, &tokens);
  CHECK(tokens > 0);
  for (double v : rec.values) CHECK(v == 1.0);
  for (double a : rec.advantages) CHECK(a == 0.0);
}
