// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/rollout.hpp"

#include <cmath>

#include "vinelab/errors.hpp"
#include "vinelab/parallel.hpp"

namespace vinelab {

namespace {

// Chooses the next token for `seq`; returns its log-prob under the
// temperature-scaled policy (0 for greedy).
Token next_token(const PolicySnapshot& policy, std::span<const Token> seq, double temperature,
                 Rng& rng, std::vector<double>& buf, double* log_prob) {
  policy.logits(seq, buf);
  if (temperature <= 0.0) {
    if (log_prob) *log_prob = 0.0;
    return argmax(buf);
  }
  softmax_inplace(buf, temperature);
  const Token a = sample_from(buf, rng);
  if (log_prob) *log_prob = std::log(buf[static_cast<std::size_t>(a)]);
  return a;
}

}  // namespace

Trajectory sample_trajectory(const Environment& env, const PolicySnapshot& policy,
                             const TaskInstance& task, double temperature, Rng& rng) {
  Trajectory traj;
  traj.task = task;
  std::vector<Token> seq(task.prompt);
  std::vector<double> buf(static_cast<std::size_t>(env.vocab().size()));
  const std::size_t prompt_len = task.prompt.size();
  for (;;) {
    double lp = 0.0;
    const Token a = next_token(policy, seq, temperature, rng, buf, &lp);
    seq.push_back(a);
    traj.actions.push_back(a);
    traj.behavior_log_probs.push_back(lp);
    const std::span<const Token> generated(seq.data() + prompt_len, seq.size() - prompt_len);
    if (env.is_terminal(generated)) {
      traj.rewards.push_back(env.terminal_reward(generated, task));
      break;
    }
    traj.rewards.push_back(0.0);
  }
  return traj;
}

double rollout_return(const Environment& env, const PolicySnapshot& policy,
                      const TaskInstance& task, std::span<const Token> generated,
                      double temperature, Rng& rng, std::size_t* tokens) {
  if (env.is_terminal(generated)) throw ContractViolation("rollout from a terminal state");
  std::vector<Token> seq(task.prompt);
  seq.insert(seq.end(), generated.begin(), generated.end());
  std::vector<double> buf(static_cast<std::size_t>(env.vocab().size()));
  const std::size_t prompt_len = task.prompt.size();
  std::size_t count = 0;
  for (;;) {
    seq.push_back(next_token(policy, seq, temperature, rng, buf, nullptr));
    ++count;
    const std::span<const Token> gen(seq.data() + prompt_len, seq.size() - prompt_len);
    if (env.is_terminal(gen)) {
      if (tokens) *tokens += count;
      return env.terminal_reward(gen, task);
    }
  }
}

std::vector<Token> sample_step(const Environment& env, const PolicySnapshot& policy,
                               const TaskInstance& task, std::span<const Token> generated,
                               double temperature, Rng& rng) {
  if (env.is_terminal(generated)) throw ContractViolation("step sampled from a terminal state");
  std::vector<Token> seq(task.prompt);
  seq.insert(seq.end(), generated.begin(), generated.end());
  std::vector<double> buf(static_cast<std::size_t>(env.vocab().size()));
  const std::size_t prompt_len = task.prompt.size();
  std::vector<Token> step;
  for (;;) {
    const Token a = next_token(policy, seq, temperature, rng, buf, nullptr);
    seq.push_back(a);
    step.push_back(a);
    const std::span<const Token> gen(seq.data() + prompt_len, seq.size() - prompt_len);
    if (a == env.vocab().sep() || env.is_terminal(gen)) return step;
  }
}

double evaluate_accuracy(const Environment& env, const PolicySnapshot& policy,
                         std::span<const TaskInstance> tasks, double temperature, int rounds,
                         std::uint64_t seed, int workers) {
  if (tasks.empty() || rounds < 1) return 0.0;
  const std::size_t n = tasks.size();
  std::vector<double> rewards(n * static_cast<std::size_t>(rounds));
  parallel_for(rewards.size(), workers, [&](std::size_t k) {
    const std::size_t r = k / n, i = k % n;
    Rng rng(derive_seed(seed, {r, i}));
    rewards[k] = sample_trajectory(env, policy, tasks[i], temperature, rng).total_return();
  });
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum / static_cast<double>(rewards.size());
}

}  // namespace vinelab
