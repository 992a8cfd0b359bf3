// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "vinelab/errors.hpp"
#include "vinelab/rollout.hpp"
#include "vinelab/value.hpp"

using namespace vinelab;

namespace {

// Tabular policy whose logits favour the reference solution by `margin`.
PolicySnapshot scripted(const Environment& env, const TaskInstance& task, double margin) {
  const auto tasks = std::vector<TaskInstance>{task};
  auto p = PolicySnapshot::tabular(env.vocab(), 16, enumerate_contexts(env, tasks, 16));
  std::vector<double> params(p.num_params(), 0.0);
  const auto sol = env.reference_solution(task);
  std::vector<Token> seq = task.prompt;
  for (Token a : sol) {
    for (std::size_t r = 0; r < p.contexts().size(); ++r)
      if (p.contexts()[r] == p.context(seq)) params[r * 4 + static_cast<std::size_t>(a)] = margin;
    seq.push_back(a);
  }
  return p.with_params(params);
}

}  // namespace

TEST_CASE("exact value of a scripted policy matches the product of step probabilities") {
  const Environment env(EnvConfig::tiny());
  const TaskInstance task = enumerate_tasks(env.config().difficulty)[1];
  const auto policy = scripted(env, task, 3.0);
  const double follow = std::exp(3.0) / (std::exp(3.0) + 3.0);
  // Reaching the answer needs all six tokens of the reference solution, but a
  // wrong partial sum can still end on the right answer, so the value is at
  // least follow^6.
  const double v0 = exact_value(env, policy, task, env.initial_state(task)).value;
  CHECK(v0 >= std::pow(follow, 6) - 1e-12);
  CHECK(v0 <= 1.0);

  TokenMdpState s = env.initial_state(task);
  const auto sol = env.reference_solution(task);
  for (std::size_t i = 0; i + 1 < sol.size(); ++i) s = env.transition(s, sol[i]);
  // One token left: reward iff EOS is emitted.
  CHECK(exact_value(env, policy, task, s).value == doctest::Approx(follow).epsilon(1e-12));
}

TEST_CASE("terminal states have value zero") {
  const Environment env(EnvConfig::tiny());
  const TaskInstance task = enumerate_tasks(env.config().difficulty)[0];
  const auto policy = PolicySnapshot::mlp(env.vocab(), 6, MlpShape{4, 8}, 1);
  TokenMdpState s = env.transition(env.initial_state(task), env.vocab().eos());
  CHECK(mc_value(env, policy, task, s, 5, 1.0, 2).value == 0.0);
  CHECK(exact_value(env, policy, task, s).value == 0.0);
}

TEST_CASE("mc_value is deterministic in its seed and bounded") {
  const Environment env(EnvConfig::default_env());
  const TaskInstance task = env.generate_task(3);
  const auto policy = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{4, 8}, 1);
  const TokenMdpState s = env.initial_state(task);
  const auto a = mc_value(env, policy, task, s, 9, 0.6, 77);
  const auto b = mc_value(env, policy, task, s, 9, 0.6, 77);
  CHECK(a.value == b.value);
  CHECK(a.samples == 9);
  CHECK(a.value >= 0.0);
  CHECK(a.value <= 1.0);
  CHECK_THROWS_AS(mc_value(env, policy, task, s, 0, 0.6, 77), ConfigError);
}

TEST_CASE("enumeration refuses trees beyond its leaf budget") {
  const Environment env(EnvConfig::default_env());
  const TaskInstance task = env.generate_task(3);
  const auto policy = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{4, 8}, 1);
  CHECK_THROWS_AS(exact_value(env, policy, task, env.initial_state(task)), OracleUnavailable);
}

TEST_CASE("enumerated leaf probabilities sum to one") {
  const Environment env(EnvConfig::tiny());
  const TaskInstance task = enumerate_tasks(env.config().difficulty)[2];
  const auto policy = PolicySnapshot::mlp(env.vocab(), 6, MlpShape{4, 8}, 4, 1.0);
  double total = 0.0;
  enumerate_completions(env, policy, task, env.initial_state(task), 0.8,
                        [&](std::span<const Token>, double p, double) { total += p; });
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("value net starts from the policy trunk with a zero head") {
  const Environment env(EnvConfig::default_env());
  const auto policy = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{4, 8}, 1, 0.5);
  const ValueNet net = ValueNet::from_policy(policy);
  const TaskInstance task = env.generate_task(1);
  CHECK(net.predict(task.prompt) == 0.0);
  for (std::size_t i = 0; i + 9 < net.num_params(); ++i) CHECK(net.params()[i] == policy.params()[i]);
}

TEST_CASE("value targets are returns-to-go") {
  Trajectory t;
  t.task.prompt = {1, 2};
  t.actions = {0, 1, 2};
  t.rewards = {0.0, 0.0, 1.0};
  const ValueTargets vt = value_targets(t);
  CHECK(vt.returns == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(vt.states[0] == std::vector<Token>{1, 2});
  CHECK(vt.states[2] == std::vector<Token>{1, 2, 0, 1});
}

TEST_CASE("value loss vanishes at the targets") {
  const Environment env(EnvConfig::default_env());
  const auto policy = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{4, 8}, 1, 0.5);
  const ValueNet net = ValueNet::from_policy(policy);
  Rng rng(3);
  ValueTargets vt = value_targets(sample_trajectory(env, policy, env.generate_task(2), 1.0, rng));
  for (auto& g : vt.returns) g = 0.0;  // the zero head predicts 0 everywhere
  const auto lg = value_net_loss(net, net, std::vector<ValueTargets>{vt}, 0.2);
  CHECK(lg.loss == 0.0);
  for (double g : lg.grad) CHECK(g == 0.0);
}
