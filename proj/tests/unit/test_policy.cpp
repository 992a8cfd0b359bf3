// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "vinelab/errors.hpp"
#include "vinelab/policy.hpp"
#include "vinelab/rollout.hpp"

using namespace vinelab;

namespace {

PolicySnapshot small_mlp(const Environment& env, std::uint64_t seed, double scale = 0.5) {
  return PolicySnapshot::mlp(env.vocab(), 16, MlpShape{4, 8}, seed, scale);
}

}  // namespace

TEST_CASE("action probabilities are a distribution at every temperature") {
  const Environment env(EnvConfig::default_env());
  const auto p = small_mlp(env, 1);
  const TokenMdpState s = env.initial_state(env.generate_task(1));
  for (double t : {0.1, 0.6, 1.0, 3.0}) {
    const auto probs = action_probs(p, s, t);
    CHECK(probs.size() == 12);
    CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    double lp = 0.0;
    for (Token a = 0; a < 12; ++a) lp += std::exp(log_prob(p, s, a, t));
    CHECK(lp == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("low temperature concentrates on the greedy action") {
  const Environment env(EnvConfig::default_env());
  const auto p = small_mlp(env, 2, 2.0);
  const TokenMdpState s = env.initial_state(env.generate_task(4));
  const auto probs = action_probs(p, s, 1e-3);
  CHECK(probs[static_cast<std::size_t>(greedy_action(p, s))] > 0.99);
}

TEST_CASE("grad_log_prob matches a central difference") {
  const Environment env(EnvConfig::default_env());
  const auto p = small_mlp(env, 3);
  const TokenMdpState s = env.initial_state(env.generate_task(5));
  const auto g = grad_log_prob(p, s, 4, 0.7);
  std::vector<double> params(p.params().begin(), p.params().end());
  for (std::size_t i = 0; i < params.size(); i += 17) {
    const double x = params[i], h = 1e-5;
    params[i] = x + h;
    const double up = log_prob(p.with_params(params), s, 4, 0.7);
    params[i] = x - h;
    const double down = log_prob(p.with_params(params), s, 4, 0.7);
    params[i] = x;
    CHECK(g[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1e-3));
  }
}

TEST_CASE("batched backward equals summed backward") {
  const Environment env(EnvConfig::default_env());
  const auto p = small_mlp(env, 4);
  Rng rng(5);
  std::vector<double> a(p.num_params(), 0.0), b(p.num_params(), 0.0);
  {
    PolicySnapshot::GradBatch batch(p, b);
    for (int i = 0; i < 20; ++i) {
      const Trajectory t = sample_trajectory(env, p, env.generate_task(static_cast<std::uint64_t>(i)), 1.0, rng);
      for (std::size_t k = 0; k < t.length(); ++k) {
        std::vector<double> dl(12);
        for (auto& x : dl) x = uniform01(rng) - 0.5;
        const auto seq = t.prefix(k);
        p.backward(seq, dl, a);
        batch.add(seq, dl);
      }
    }
  }
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-9).scale(1e-9));
}

TEST_CASE("kl estimator and exact kl") {
  const Environment env(EnvConfig::default_env());
  const auto p = small_mlp(env, 6);
  const auto q = small_mlp(env, 7);
  const TokenMdpState s = env.initial_state(env.generate_task(8));
  CHECK(exact_kl(p, p, s) == doctest::Approx(0.0).scale(1e-15));
  CHECK(exact_kl(p, q, s) > 0.0);
  for (Token a = 0; a < 12; ++a) {
    CHECK(kl_hat(p, p, s, a) == 0.0);
    CHECK(kl_hat(p, q, s, a) >= 0.0);
  }
  // E_{a~p}[kl_hat] is the exact KL.
  const auto probs = action_probs(p, s);
  double expect = 0.0;
  for (Token a = 0; a < 12; ++a) expect += probs[static_cast<std::size_t>(a)] * kl_hat(p, q, s, a);
  CHECK(expect == doctest::Approx(exact_kl(p, q, s)).epsilon(1e-12));
}

TEST_CASE("tabular policy looks up windowed contexts") {
  const Environment env(EnvConfig::tiny());
  const auto tasks = enumerate_tasks(env.config().difficulty);
  const auto contexts = enumerate_contexts(env, tasks, 3);
  auto p = PolicySnapshot::tabular(env.vocab(), 3, contexts);
  CHECK(p.num_params() == contexts.size() * 4);
  std::vector<double> params(p.num_params(), 0.0);
  params[3] = 5.0;  // the first task's empty response prefers EOS
  p = p.with_params(params);
  CHECK(p.context(tasks[0].prompt) == contexts[0]);
  std::vector<double> lg(4);
  p.logits(tasks[0].prompt, lg);
  CHECK(lg[3] == 5.0);
  p.logits(std::vector<Token>{0, 0, 0, 0, 0}, lg);  // unseen context: uniform
  CHECK(lg[3] == 0.0);
  CHECK_THROWS_AS(p.with_params(std::vector<double>(3)), ContractViolation);
}

TEST_CASE("parameter hash tracks parameters") {
  const Environment env(EnvConfig::default_env());
  const auto p = small_mlp(env, 9);
  CHECK(parameter_hash(p) == parameter_hash(small_mlp(env, 9)));
  CHECK(parameter_hash(p) != parameter_hash(small_mlp(env, 10)));
}
