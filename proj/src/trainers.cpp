// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/trainers.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trainer_util.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/rollout.hpp"

namespace vinelab {

double sequence_log_prob(const PolicySnapshot& policy, const TaskInstance& task,
                         std::span<const Token> response, double temperature) {
  std::vector<Token> seq(task.prompt);
  std::vector<double> buf(static_cast<std::size_t>(policy.vocab().size()));
  double total = 0.0;
  for (Token a : response) {
    policy.logits(seq, buf);
    total += log_softmax_at(buf, a, temperature);
    seq.push_back(a);
  }
  return total;
}

void accumulate_sequence_grad(const PolicySnapshot& policy, const TaskInstance& task,
                              std::span<const Token> response, double scale,
                              PolicySnapshot::GradBatch& grad, double temperature) {
  std::vector<Token> seq(task.prompt);
  std::vector<double> d(static_cast<std::size_t>(policy.vocab().size()));
  for (Token a : response) {
    detail::score_dlogits(policy, seq, a, temperature, scale, d);
    grad.add(seq, d);
    seq.push_back(a);
  }
}

void accumulate_sequence_grad(const PolicySnapshot& policy, const TaskInstance& task,
                              std::span<const Token> response, double scale,
                              std::span<double> grad, double temperature) {
  PolicySnapshot::GradBatch batch(policy, grad);
  accumulate_sequence_grad(policy, task, response, scale, batch, temperature);
}

double sft_dataset_loss(const Environment& env, const PolicySnapshot& policy,
                        std::span<const TaskInstance> tasks) {
  if (tasks.empty()) throw ContractViolation("sft loss over an empty task set");
  double total = 0.0;
  for (const auto& t : tasks) total -= sequence_log_prob(policy, t, env.reference_solution(t));
  return total / static_cast<double>(tasks.size());
}

SftResult sft_pretrain(const Environment& env, const PolicySnapshot& init,
                       std::span<const TaskInstance> tasks, const SftConfig& config,
                       std::span<const TaskInstance> heldout) {
  if (tasks.empty()) throw ContractViolation("sft_pretrain needs a non-empty task set");
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("invalid sft config");
  std::vector<std::vector<Token>> targets;
  targets.reserve(tasks.size());
  for (const auto& t : tasks) targets.push_back(env.reference_solution(t));

  PolicySnapshot policy = init;
  std::vector<double> params(policy.params().begin(), policy.params().end());
  Adam opt(params.size(), config.lr);
  SftResult result{policy, {sft_dataset_loss(env, policy, tasks)}, 0.0};
  std::vector<std::size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(params.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {0x5f7ULL, static_cast<std::uint64_t>(epoch)}));
    detail::shuffle(order, rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      const double scale = -1.0 / static_cast<double>(end - start);  // minimize mean NLL
      {
        PolicySnapshot::GradBatch batch(policy, grad);
        for (std::size_t i = start; i < end; ++i)
          accumulate_sequence_grad(policy, tasks[order[i]], targets[order[i]], scale, batch);
      }
      opt.step(params, grad);
      policy = policy.with_params(params);
    }
    const double loss = sft_dataset_loss(env, policy, tasks);
    if (!std::isfinite(loss))
      throw DivergenceError(fmt::format("sft loss became non-finite at epoch {}", epoch + 1));
    result.epoch_losses.push_back(loss);
  }
  result.policy = policy;
  if (!heldout.empty())
    result.heldout_greedy_acc = evaluate_accuracy(env, policy, heldout, kGreedy, 1, 0);
  return result;
}

LossAndGrad ppo_policy_loss(const PolicySnapshot& policy, const PolicySnapshot& old_policy,
                            const PolicySnapshot& reference,
                            std::span<const Trajectory> trajectories,
                            std::span<const AdvantageRecord> advantages, double clip_eps,
                            double kl_coef, double temperature) {
  if (trajectories.size() != advantages.size())
    throw ContractViolation("one advantage record per trajectory is required");
  std::vector<detail::PpoItem> items;
  std::vector<std::vector<double>> old_lp(trajectories.size()), ref_lp(trajectories.size());
  items.reserve(trajectories.size());
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    old_lp[i] = detail::token_log_probs(old_policy, trajectories[i], temperature);
    ref_lp[i] = detail::token_log_probs(reference, trajectories[i], temperature);
    items.push_back({&trajectories[i], &advantages[i], &old_lp[i], &ref_lp[i]});
  }
  return detail::ppo_loss(policy, items, clip_eps, kl_coef, temperature);
}

namespace detail {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

void score_dlogits(const PolicySnapshot& policy, std::span<const Token> seq, Token action,
                   double temperature, double scale, std::span<double> out) {
  policy.logits(seq, out);
  softmax_inplace(out, temperature);
  for (double& v : out) v *= -scale / temperature;
  out[static_cast<std::size_t>(action)] += scale / temperature;
}

std::vector<double> token_log_probs(const PolicySnapshot& policy, const Trajectory& traj,
                                    double temperature) {
  std::vector<double> out;
  out.reserve(traj.length());
  std::vector<Token> seq(traj.task.prompt);
  std::vector<double> buf(static_cast<std::size_t>(policy.vocab().size()));
  for (Token a : traj.actions) {
    policy.logits(seq, buf);
    out.push_back(log_softmax_at(buf, a, temperature));
    seq.push_back(a);
  }
  return out;
}

LossAndGrad ppo_loss(const PolicySnapshot& policy, std::span<const PpoItem> items,
                     double clip_eps, double kl_coef, double temperature) {
  if (!(clip_eps > 0.0)) throw ConfigError("clip epsilon must be positive");
  if (kl_coef < 0.0) throw ConfigError("KL coefficient must be nonnegative");
  if (items.empty()) throw ContractViolation("ppo loss on an empty batch");
  LossAndGrad out;
  out.grad.assign(policy.num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(items.size());
  std::vector<double> p(static_cast<std::size_t>(policy.vocab().size()));
  PolicySnapshot::GradBatch batch(policy, out.grad);
  for (const PpoItem& item : items) {
    const Trajectory& traj = *item.trajectory;
    const auto& adv = item.advantages->advantages;
    if (adv.size() != traj.length() || item.old_log_probs->size() != traj.length() ||
        item.ref_log_probs->size() != traj.length())
      throw ContractViolation(
          fmt::format("advantage length {} does not match trajectory length {}", adv.size(),
                      traj.length()));
    std::vector<Token> seq(traj.task.prompt);
    for (std::size_t t = 0; t < traj.length(); ++t) {
      const Token a = traj.actions[t];
      policy.logits(seq, p);
      softmax_inplace(p, temperature);
      const double logp = std::log(p[static_cast<std::size_t>(a)]);
      const double ratio = std::exp(logp - (*item.old_log_probs)[t]);
      const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
      const double a_t = adv[t];
      const double unclipped_term = ratio * a_t;
      const double clipped_term = clipped * a_t;
      const double log_r = (*item.ref_log_probs)[t] - logp;
      const double kl = std::expm1(log_r) - log_r;
      out.loss -= inv_n * (std::min(unclipped_term, clipped_term) - kl_coef * kl);
      // d(objective)/d(log pi): surrogate contributes rho*A when the
      // unclipped branch is the minimum; kl_hat contributes (1 - r).
      double coef = unclipped_term <= clipped_term ? unclipped_term : 0.0;
      coef -= kl_coef * (-std::expm1(log_r));
      if (coef != 0.0) {
        // d(loss)/d logits = -inv_n * coef * (onehot - p) / T
        const double s = -inv_n * coef / temperature;
        for (double& v : p) v *= -s;
        p[static_cast<std::size_t>(a)] += s;
        batch.add(seq, p);
      }
      seq.push_back(a);
    }
  }
  batch.flush();
  return out;
}

}  // namespace detail

}  // namespace vinelab
