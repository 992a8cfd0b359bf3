// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "vinelab/errors.hpp"
#include "vinelab/rollout.hpp"
#include "vinelab/trainers.hpp"

using namespace vinelab;

namespace {

struct Fixture {
  Environment env{EnvConfig::tiny()};
  std::vector<TaskInstance> tasks = enumerate_tasks(env.config().difficulty);
  PolicySnapshot policy = PolicySnapshot::mlp(env.vocab(), 6, MlpShape{4, 16}, 3, 0.5);
};

std::vector<Trajectory> sample(const Fixture& f, const PolicySnapshot& p, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Trajectory> out;
  for (int i = 0; i < n; ++i)
    out.push_back(sample_trajectory(f.env, p, f.tasks[static_cast<std::size_t>(i) % f.tasks.size()], 1.0, rng));
  return out;
}

}  // namespace

TEST_CASE("sequence log-prob is the sum of token log-probs") {
  Fixture f;
  const auto t = sample(f, f.policy, 1, 1)[0];
  double sum = 0.0;
  TokenMdpState s = f.env.initial_state(t.task);
  for (Token a : t.actions) {
    sum += log_prob(f.policy, s, a);
    s.generated.push_back(a);
  }
  CHECK(sequence_log_prob(f.policy, t.task, t.actions) == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("sft lowers the dataset loss and is reproducible") {
  Fixture f;
  const SftConfig cfg{150, 2, 1e-2, 7};
  const SftResult a = sft_pretrain(f.env, f.policy, f.tasks, cfg, f.tasks);
  const SftResult b = sft_pretrain(f.env, f.policy, f.tasks, cfg, f.tasks);
  REQUIRE(a.epoch_losses.size() == 151);
  CHECK(a.epoch_losses.back() < 0.1 * a.epoch_losses.front());
  CHECK(a.epoch_losses == b.epoch_losses);
  CHECK(a.heldout_greedy_acc == 1.0);
}

TEST_CASE("ppo loss at the behavior policy is minus the mean advantage-weighted ratio") {
  Fixture f;
  const auto trajs = sample(f, f.policy, 4, 2);
  std::vector<AdvantageRecord> advs(trajs.size());
  double expect = 0.0;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    for (std::size_t t = 0; t < trajs[i].length(); ++t) {
      advs[i].advantages.push_back(0.25 * static_cast<double>(t) - 0.5);
      expect -= advs[i].advantages.back();
    }
  expect /= static_cast<double>(trajs.size());
  const auto lg = ppo_policy_loss(f.policy, f.policy, f.policy, trajs, advs, 0.2, 0.1);
  CHECK(lg.loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("clipping removes the gradient of tokens pushed past the trust region") {
  Fixture f;
  const auto trajs = sample(f, f.policy, 1, 3);
  std::vector<double> shifted(f.policy.params().begin(), f.policy.params().end());
  for (auto& x : shifted) x *= 8.0;  // a far-away policy: ratios leave [0.8, 1.2]
  const auto far = f.policy.with_params(shifted);
  std::vector<AdvantageRecord> advs(1);
  advs[0].advantages.assign(trajs[0].length(), 0.0);
  double rho = 0.0;
  std::size_t pick = 0;
  TokenMdpState s = f.env.initial_state(trajs[0].task);
  for (std::size_t t = 0; t < trajs[0].length(); ++t) {
    const double r = std::exp(log_prob(far, s, trajs[0].actions[t]) - log_prob(f.policy, s, trajs[0].actions[t]));
    if (r > 1.2 && r > rho) {
      rho = r;
      pick = t;
    }
    s.generated.push_back(trajs[0].actions[t]);
  }
  if (rho == 0.0) return;  // no token above the band for this draw
  advs[0].advantages[pick] = 1.0;
  const auto lg = ppo_policy_loss(far, f.policy, far, trajs, advs, 0.2, 0.0);
  CHECK(lg.loss == doctest::Approx(-1.2).epsilon(1e-12));
  for (double g : lg.grad) CHECK(g == 0.0);
}

TEST_CASE("restem and REINFORCE gradients coincide") {
  Fixture f;
  const auto trajs = sample(f, f.policy, 64, 4);
  const auto a = restem_gradient(f.policy, trajs);
  const auto b = reinforce_gradient(f.policy, trajs);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9).scale(1e-12));
}

TEST_CASE("dpo-positive at the reference is log 2 and penalises a shrinking chosen response") {
  Fixture f;
  const TaskInstance& task = f.tasks[1];
  PreferencePair pair{task, f.env.reference_solution(task), {f.env.vocab().eos()}};
  CHECK(dpo_positive_loss(f.policy, f.policy, pair, 0.1, 5.0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  // Move the policy down the gradient and the loss drops.
  auto lg = dpo_positive_loss(f.policy, f.policy, pair, 0.1, 5.0);
  std::vector<double> p(f.policy.params().begin(), f.policy.params().end());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 0.5 * lg.grad[i];
  CHECK(dpo_positive_loss(f.policy.with_params(p), f.policy, pair, 0.1, 5.0).loss < std::log(2.0));
}

TEST_CASE("preference pairs pair a correct with an incorrect response") {
  Fixture f;
  const auto pairs = build_preference_pairs(f.env, f.policy, f.tasks, 8, 1.0, 5);
  for (const auto& p : pairs) {
    CHECK(f.env.terminal_reward(p.chosen, p.task) == 1.0);
    CHECK(f.env.terminal_reward(p.rejected, p.task) == 0.0);
    CHECK(p.rejected.back() == f.env.vocab().eos());
  }
}

TEST_CASE("ppo config validation names the field") {
  PpoConfig c;
  CHECK_NOTHROW(c.validate());
  c.minibatch_size = 7;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("minibatch_size") != std::string::npos);
  }
}

TEST_CASE("run_ppo is reproducible and resumable on the tiny env") {
  Fixture f;
  TaskSplits splits;
  splits.train = splits.validation = splits.test = f.tasks;
  PpoConfig c;
  c.iterations = 4;
  c.prompts_per_iteration = 4;
  c.samples_per_prompt = 2;
  c.minibatch_size = 4;
  c.eval_rounds = 2;
  c.eval_train_tasks = 4;
  c.audit_every = 2;
  c.audit_trajectories = 2;
  c.audit_top_action_trials = 2;
  c.mc_rollouts = 2;
  for (ValueSource src : {ValueSource::kMonteCarlo, ValueSource::kValueNet}) {
    const PpoResult a = run_ppo(f.env, c, f.policy, splits, src);
    const PpoResult b = run_ppo(f.env, c, f.policy, splits, src);
    REQUIRE(a.metrics.size() == 5);
    CHECK(parameter_hash(a.final_policy) == parameter_hash(b.final_policy));
    CHECK(a.metrics.back().gradient_steps == 4 * 2 * 2);
    CHECK(a.metrics.front().exact_kl == 0.0);
    CHECK_FALSE(a.value_audit.empty());

    struct Keep : RunObserver {
      std::optional<TrainerCheckpoint> at2;
      void on_checkpoint(const TrainerCheckpoint& ck) override {
        if (ck.next_iteration == 2) at2 = ck;
      }
    } keep;
    run_ppo(f.env, c, f.policy, splits, src, &keep);
    REQUIRE(keep.at2);
    const PpoResult r = run_ppo(f.env, c, f.policy, splits, src, nullptr, &*keep.at2);
    CHECK(parameter_hash(r.final_policy) == parameter_hash(a.final_policy));
  }
}
