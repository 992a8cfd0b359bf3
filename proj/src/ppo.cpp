// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <numeric>

#include "trainer_util.hpp"
#include "vinelab/analysis.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/parallel.hpp"
#include "vinelab/rollout.hpp"
#include "vinelab/trainers.hpp"

namespace vinelab {

void PpoConfig::validate() const {
  auto need = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(fmt::format("{}: {}", key, what));
  };
  need(iterations >= 0, "iterations", "must be >= 0");
  need(prompts_per_iteration >= 1, "prompts_per_iteration", "must be >= 1");
  need(samples_per_prompt >= 1, "samples_per_prompt", "must be >= 1");
  need(minibatch_size >= 1 && batch_size() % minibatch_size == 0, "minibatch_size",
       "must divide prompts_per_iteration * samples_per_prompt");
  need(epochs >= 1, "epochs", "must be >= 1");
  need(clip_eps > 0.0, "clip_eps", "must be > 0");
  need(kl_coef >= 0.0, "kl_coef", "must be >= 0");
  need(value_clip > 0.0, "value_clip", "must be > 0");
  need(lr_policy > 0.0, "lr_policy", "must be > 0");
  need(lr_value > 0.0, "lr_value", "must be > 0");
  need(temperature > 0.0, "temperature", "must be > 0");
  need(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda", "must lie in [0, 1]");
  need(mc_rollouts >= 1, "mc_rollouts", "must be >= 1");
  need(mc_temperature >= 0.0, "mc_temperature", "must be >= 0");
  need(eval_temperature >= 0.0, "eval_temperature", "must be >= 0");
  need(eval_rounds >= 1, "eval_rounds", "must be >= 1");
  need(eval_train_tasks >= 0, "eval_train_tasks", "must be >= 0");
  need(audit_every >= 0, "audit_every", "must be >= 0");
  need(audit_trajectories >= 0, "audit_trajectories", "must be >= 0");
  need(audit_top_action_trials >= 0, "audit_top_action_trials", "must be >= 0");
  need(workers >= 1, "workers", "must be >= 1");
}

namespace {

TokenMdpState state_at(const Trajectory& traj, std::size_t t) {
  return {traj.task.prompt,
          std::vector<Token>(traj.actions.begin(),
                             traj.actions.begin() + static_cast<std::ptrdiff_t>(t)),
          false};
}

struct Batch {
  std::vector<Trajectory> trajectories;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  long long tokens = 0;
};

Batch sample_batch(const Environment& env, const PpoConfig& config, const PolicySnapshot& policy,
                   const PolicySnapshot& reference, std::span<const TaskInstance> train, int it) {
  const auto it64 = static_cast<std::uint64_t>(it);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng pick(derive_seed(config.seed, {it64, 0}));
  detail::shuffle(order, pick);

  const auto n = static_cast<std::size_t>(config.batch_size());
  Batch batch;
  batch.trajectories.resize(n);
  std::vector<double> kl_sum(n, 0.0);
  parallel_for(n, config.workers, [&](std::size_t b) {
    const auto& task = train[order[(b / static_cast<std::size_t>(config.samples_per_prompt)) %
                                   order.size()]];
    Rng rng(derive_seed(config.seed, {it64, 1, b}));
    batch.trajectories[b] = sample_trajectory(env, policy, task, config.temperature, rng);
    TokenMdpState s = env.initial_state(task);
    for (Token a : batch.trajectories[b].actions) {
      kl_sum[b] += exact_kl(policy, reference, s);
      s = env.transition(s, a);
    }
  });
  long long states = 0;
  double reward = 0.0, kl = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    states += static_cast<long long>(batch.trajectories[b].length());
    reward += batch.trajectories[b].total_return();
    kl += kl_sum[b];
  }
  batch.tokens = states;
  batch.mean_reward = reward / static_cast<double>(n);
  batch.mean_kl = states > 0 ? kl / static_cast<double>(states) : 0.0;
  return batch;
}

}  // namespace

PpoResult run_ppo(const Environment& env, const PpoConfig& config, const PolicySnapshot& reference,
                  const TaskSplits& tasks, ValueSource source, RunObserver* observer,
                  const TrainerCheckpoint* resume) {
  config.validate();
  if (tasks.train.empty() || tasks.test.empty() || tasks.validation.empty())
    throw ContractViolation("run_ppo needs non-empty train, validation and test splits");
  const bool use_net = source == ValueSource::kValueNet;
  const double mc_temp = config.rollout_temperature();
  const ValueMethod predictor = use_net ? ValueMethod::kNet : ValueMethod::kMc;

  PolicySnapshot policy = resume ? resume->policy : reference;
  std::optional<ValueNet> valnet;
  if (use_net) valnet = resume && resume->valnet ? *resume->valnet : ValueNet::from_policy(reference);
  Adam popt(policy.num_params(), config.lr_policy);
  Adam vopt(valnet ? valnet->num_params() : 0, config.lr_value);
  PpoResult result{{}, policy, policy, 0, {}, {}};
  double best_val = -1.0;
  IterationMetrics counters;
  int start = 0;
  if (resume) {
    popt.restore(resume->policy_opt);
    if (valnet) vopt.restore(resume->value_opt);
    result.best_policy = resume->best_policy;
    result.best_iteration = resume->best_iteration;
    best_val = resume->best_val;
    counters = resume->counters;
    start = resume->next_iteration;
  }

  std::span<const TaskInstance> train_eval(
      tasks.train.data(),
      std::min(tasks.train.size(), static_cast<std::size_t>(config.eval_train_tasks)));

  for (int it = start; it <= config.iterations; ++it) {
    const auto wall_start = std::chrono::steady_clock::now();
    const auto it64 = static_cast<std::uint64_t>(it);
    IterationMetrics m = counters;
    m.iteration = it;
    const std::uint64_t eval_seed = derive_seed(config.seed, {it64, 10});
    m.test_acc = evaluate_accuracy(env, policy, tasks.test, config.eval_temperature,
                                   config.eval_rounds, eval_seed, config.workers);
    m.test_acc_greedy = evaluate_accuracy(env, policy, tasks.test, kGreedy, 1, 0, config.workers);
    m.val_acc = evaluate_accuracy(env, policy, tasks.validation, config.eval_temperature,
                                  config.eval_rounds, derive_seed(eval_seed, {1}), config.workers);
    if (!train_eval.empty())
      m.train_acc = evaluate_accuracy(env, policy, train_eval, config.eval_temperature,
                                      config.eval_rounds, derive_seed(eval_seed, {2}),
                                      config.workers);
    if (m.val_acc > best_val) {
      best_val = m.val_acc;
      result.best_policy = policy;
      result.best_iteration = it;
    }

    Batch batch = sample_batch(env, config, policy, reference, tasks.train, it);
    m.exact_kl = batch.mean_kl;
    m.batch_reward = batch.mean_reward;
    const bool last = it == config.iterations;

    if (!last) {
      const std::size_t n = batch.trajectories.size();
      std::vector<AdvantageRecord> advs(n);
      std::vector<std::size_t> mc_tokens(n, 0);
      std::vector<std::size_t> mc_count(n, 0);
      const Token sep = env.vocab().sep();
      parallel_for(n, config.workers, [&](std::size_t b) {
        const Trajectory& traj = batch.trajectories[b];
        if (use_net) {
          advs[b] = gae_advantages(*valnet, traj, config.gae_lambda);
        } else {
          const auto seg = segment_steps(traj, sep);
          advs[b] = mc_advantages(env, policy, traj, seg, config.mc_rollouts, mc_temp,
                                  derive_seed(config.seed, {it64, 2, b}), &mc_tokens[b]);
          mc_count[b] = seg.steps.size() * static_cast<std::size_t>(config.mc_rollouts);
        }
      });
      for (std::size_t b = 0; b < n; ++b) {
        counters.mc_rollouts += static_cast<long long>(mc_count[b]);
        counters.mc_tokens += static_cast<long long>(mc_tokens[b]);
      }

      if (config.audit_every > 0 && it % config.audit_every == 0) {
        // Value audit on the states the trainer just estimated.
        const std::size_t audited =
            std::min(n, static_cast<std::size_t>(config.audit_trajectories));
        std::vector<std::vector<ValueAuditRecord>> per_traj(audited);
        parallel_for(audited, config.workers, [&](std::size_t b) {
          const Trajectory& traj = batch.trajectories[b];
          const auto seg = segment_steps(traj, sep);
          for (std::size_t i = 0; i < seg.steps.size(); ++i) {
            const std::size_t t = seg.steps[i].begin;
            const TokenMdpState s = state_at(traj, t);
            const std::uint64_t seed = derive_seed(config.seed, {it64, 4, b, i});
            const ValueEstimate truth = ground_truth_value(env, policy, traj.task, s, mc_temp, seed);
            ValueAuditRecord r;
            r.iteration = it;
            r.state = state_id(s);
            r.step_index = static_cast<int>(i);
            r.step_count = static_cast<int>(seg.steps.size());
            r.truth = truth.value;
            r.truth_method = truth.method;
            r.predicted = use_net ? advs[b].values[t] : advs[b].values[i];
            r.method = predictor;
            r.samples = use_net ? 0 : config.mc_rollouts;
            r.seed = seed;
            per_traj[b].push_back(std::move(r));
          }
        });
        std::vector<ValueAuditRecord> audit;
        for (auto& v : per_traj) audit.insert(audit.end(), v.begin(), v.end());

        const auto trials = static_cast<std::size_t>(config.audit_top_action_trials);
        std::vector<TopActionRecord> top(trials);
        parallel_for(trials, config.workers, [&](std::size_t j) {
          const Trajectory& traj = batch.trajectories[j % n];
          const auto seg = segment_steps(traj, sep);
          Rng rng(derive_seed(config.seed, {it64, 5, j}));
          const std::size_t i = static_cast<std::size_t>(uniform_index(rng, seg.steps.size()));
          const TokenMdpState s = state_at(traj, seg.steps[i].begin);
          StateEstimator est = [&](const TokenMdpState& x, std::uint64_t seed) {
            if (use_net) return valnet->predict(x.sequence());
            return mc_value(env, policy, traj.task, x, config.mc_rollouts, mc_temp, seed).value;
          };
          const TopActionTrial trial = top_action_trial(env, policy, traj.task, s, est, mc_temp,
                                                        derive_seed(config.seed, {it64, 6, j}));
          top[j] = {it, state_id(s), predictor, trial.truth, trial.predicted, trial.correct,
                    trial.informative};
        });
        if (observer) {
          observer->on_value_audit(audit);
          observer->on_top_action(top);
        }
        result.value_audit.insert(result.value_audit.end(), audit.begin(), audit.end());
        result.top_actions.insert(result.top_actions.end(), top.begin(), top.end());
      }

      if (config.normalize_advantages) normalize_advantages(advs);

      std::vector<std::vector<double>> old_lp(n), ref_lp(n);
      std::vector<ValueTargets> targets(use_net ? n : 0);
      parallel_for(n, config.workers, [&](std::size_t b) {
        old_lp[b] = detail::token_log_probs(policy, batch.trajectories[b], config.temperature);
        ref_lp[b] = detail::token_log_probs(reference, batch.trajectories[b], config.temperature);
        if (use_net) targets[b] = value_targets(batch.trajectories[b]);
      });
      const std::optional<ValueNet> old_valnet = valnet;

      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      const auto mb = static_cast<std::size_t>(config.minibatch_size);
      for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, {it64, 3, static_cast<std::uint64_t>(epoch)}));
        detail::shuffle(order, rng);
        for (std::size_t start_i = 0; start_i < n; start_i += mb) {
          std::vector<detail::PpoItem> items;
          std::vector<ValueTargets> vt;
          for (std::size_t j = start_i; j < start_i + mb; ++j) {
            const std::size_t b = order[j];
            items.push_back({&batch.trajectories[b], &advs[b], &old_lp[b], &ref_lp[b]});
            if (use_net) vt.push_back(targets[b]);
          }
          const LossAndGrad pl =
              detail::ppo_loss(policy, items, config.clip_eps, config.kl_coef, config.temperature);
          if (!std::isfinite(pl.loss))
            throw DivergenceError(fmt::format("policy loss became non-finite at iteration {}", it));
          std::vector<double> params(policy.params().begin(), policy.params().end());
          popt.step(params, pl.grad);
          policy = policy.with_params(std::move(params));
          if (use_net) {
            const LossAndGrad vl = value_net_loss(*valnet, *old_valnet, vt, config.value_clip);
            if (!std::isfinite(vl.loss))
              throw DivergenceError(fmt::format("value loss became non-finite at iteration {}", it));
            std::vector<double> vp(valnet->params().begin(), valnet->params().end());
            vopt.step(vp, vl.grad);
            valnet = valnet->with_params(std::move(vp));
          }
          ++counters.gradient_steps;
        }
      }
      counters.episodes += static_cast<long long>(n);
      counters.rollout_tokens += batch.tokens;
    }

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall_start)
            .count();
    result.metrics.push_back(m);
    if (observer) observer->on_metrics(m, wall_ms);
    if (!last && observer) {
      TrainerCheckpoint ck{it + 1,          policy,   valnet,
                           popt.state(),    vopt.state(), result.best_policy,
                           best_val,        result.best_iteration, counters};
      observer->on_checkpoint(ck);
    }
  }
  result.final_policy = policy;
  return result;
}

}  // namespace vinelab
