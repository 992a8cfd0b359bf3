// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trainer_util.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/parallel.hpp"
#include "vinelab/rollout.hpp"
#include "vinelab/trainers.hpp"

namespace vinelab {

std::vector<double> restem_gradient(const PolicySnapshot& policy,
                                    std::span<const Trajectory> samples) {
  std::vector<double> grad(policy.num_params(), 0.0);
  if (samples.empty()) return grad;
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const double r = s.total_return();
    if (r == 0.0) continue;
    accumulate_sequence_grad(policy, s.task, s.actions, r * scale, grad);
  }
  return grad;
}

std::vector<double> reinforce_gradient(const PolicySnapshot& policy,
                                       std::span<const Trajectory> samples) {
  std::vector<double> grad(policy.num_params(), 0.0);
  if (samples.empty()) return grad;
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const double r = s.total_return();
    TokenMdpState state{s.task.prompt, {}, false};
    for (Token a : s.actions) {
      const std::vector<double> g = grad_log_prob(policy, state, a);
      for (std::size_t i = 0; i < g.size(); ++i) grad[i] += scale * r * g[i];
      state.generated.push_back(a);
    }
  }
  return grad;
}

namespace {


std::vector<Trajectory> sample_all(const Environment& env, const PolicySnapshot& policy,
                                   std::span<const TaskInstance> tasks, int per_prompt,
                                   double temperature, std::uint64_t seed, int workers) {
  const std::size_t k = static_cast<std::size_t>(per_prompt);
  std::vector<Trajectory> out(tasks.size() * k);
  parallel_for(out.size(), workers, [&](std::size_t j) {
    Rng rng(derive_seed(seed, {j / k, j % k}));
    out[j] = sample_trajectory(env, policy, tasks[j / k], temperature, rng);
  });
  return out;
}

struct Evaluator {
  const Environment& env;
  const TaskSplits& tasks;
  double temperature;
  int rounds;
  int train_tasks;
  int workers;
  std::uint64_t seed;

  void operator()(const PolicySnapshot& p, std::uint64_t tag, double& train, double& test,
                  double& val) const {
    const std::uint64_t s = derive_seed(seed, {0xe7a1ULL, tag});
    std::span<const TaskInstance> tr(
        tasks.train.data(), std::min(tasks.train.size(), static_cast<std::size_t>(train_tasks)));
    train = tr.empty() ? 0.0 : evaluate_accuracy(env, p, tr, temperature, rounds, s, workers);
    test = evaluate_accuracy(env, p, tasks.test, temperature, rounds, derive_seed(s, {1}), workers);
    val = evaluate_accuracy(env, p, tasks.validation, temperature, rounds, derive_seed(s, {2}),
                            workers);
  }
};

std::span<const TaskInstance> head(std::span<const TaskInstance> tasks, int count) {
  if (count <= 0) return tasks;
  return tasks.first(std::min(tasks.size(), static_cast<std::size_t>(count)));
}

}  // namespace

RestemResult restem_train(const Environment& env, const PolicySnapshot& reference,
                          const TaskSplits& tasks, const RestemConfig& config) {
  if (config.iterations < 1 || config.epochs < 1 || config.batch_size < 1 ||
      config.samples_per_prompt < 1)
    throw ConfigError("restem: iterations, epochs, batch_size and samples_per_prompt must be >= 1");
  if (tasks.train.empty() || tasks.validation.empty() || tasks.test.empty())
    throw ContractViolation("restem needs non-empty train, validation and test splits");
  const Evaluator eval{env, tasks, config.eval_temperature, config.eval_rounds,
                       config.eval_train_tasks, config.workers, config.seed};
  RestemResult result{reference, {}, {}};
  PolicySnapshot current = reference;
  long long steps = 0;
  bool any_correct = false;
  for (int it = 0; it < config.iterations; ++it) {
    const auto it64 = static_cast<std::uint64_t>(it);
    const auto samples =
        sample_all(env, current, head(tasks.train, config.train_prompts), config.samples_per_prompt,
                   config.temperature,
                   derive_seed(config.seed, {it64, 1}), config.workers);
    std::vector<const Trajectory*> kept;
    for (const auto& s : samples)
      if (s.total_return() > 0.0) kept.push_back(&s);
    if (kept.empty()) continue;
    any_correct = true;

    RestemPoint p0{it, 0, steps, 0, 0, 0};
    eval(current, it64 * 1000, p0.train_acc, p0.test_acc, p0.val_acc);
    result.points.push_back(p0);

    PolicySnapshot model = reference;  // each iteration restarts from the base model
    std::vector<double> params(model.params().begin(), model.params().end());
    Adam opt(params.size(), config.lr);
    std::vector<double> grad(params.size());
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<PolicySnapshot> snapshots;
    std::vector<double> vals;
    const auto bs = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
      Rng rng(derive_seed(config.seed, {it64, 2, static_cast<std::uint64_t>(epoch)}));
      detail::shuffle(order, rng);
      for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t end = std::min(order.size(), start + bs);
        std::fill(grad.begin(), grad.end(), 0.0);
        const double scale = -1.0 / static_cast<double>(end - start);
        {
          PolicySnapshot::GradBatch batch(model, grad);
          for (std::size_t i = start; i < end; ++i) {
            const Trajectory& t = *kept[order[i]];
            accumulate_sequence_grad(model, t.task, t.actions, scale, batch);
          }
        }
        opt.step(params, grad);
        model = model.with_params(params);
        ++steps;
      }
      RestemPoint p{it, epoch, steps, 0, 0, 0};
      eval(model, it64 * 1000 + static_cast<std::uint64_t>(epoch), p.train_acc, p.test_acc,
           p.val_acc);
      result.points.push_back(p);
      snapshots.push_back(model);
      vals.push_back(p.val_acc);
    }
    // Stop right before validation accuracy first drops.
    std::size_t chosen = vals.size() - 1;
    for (std::size_t e = 0; e + 1 < vals.size(); ++e) {
      if (vals[e + 1] < vals[e]) {
        chosen = e;
        break;
      }
    }
    result.chosen_epochs.push_back(static_cast<int>(chosen) + 1);
    current = snapshots[chosen];
  }
  if (!any_correct)
    throw ContractViolation("restem: no sampled response was ever correct; nothing to train on");
  result.policy = current;
  return result;
}

LossAndGrad dpo_positive_loss(const PolicySnapshot& policy, const PolicySnapshot& reference,
                              const PreferencePair& pair, double beta, double lambda_p) {
  if (!(beta > 0.0) || !(lambda_p > 0.0))
    throw ConfigError("dpo_positive: beta and lambda_p must be > 0");
  const double dw = sequence_log_prob(policy, pair.task, pair.chosen) -
                    sequence_log_prob(reference, pair.task, pair.chosen);
  const double dl = sequence_log_prob(policy, pair.task, pair.rejected) -
                    sequence_log_prob(reference, pair.task, pair.rejected);
  const double hinge = std::max(0.0, -dw);
  const double z = beta * (dw - dl) - lambda_p * hinge;
  LossAndGrad out;
  // -log sigmoid(z) = log(1 + exp(-z)), evaluated stably
  out.loss = z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  out.grad.assign(policy.num_params(), 0.0);
  const double dz = -1.0 / (1.0 + std::exp(z));  // d loss / d z = -sigmoid(-z)
  const double coef_w = beta + (-dw > 0.0 ? lambda_p : 0.0);
  {
    PolicySnapshot::GradBatch batch(policy, out.grad);
    accumulate_sequence_grad(policy, pair.task, pair.chosen, dz * coef_w, batch);
    accumulate_sequence_grad(policy, pair.task, pair.rejected, -dz * beta, batch);
  }
  return out;
}

std::vector<PreferencePair> build_preference_pairs(const Environment& env,
                                                   const PolicySnapshot& policy,
                                                   std::span<const TaskInstance> tasks,
                                                   int samples_per_prompt, double temperature,
                                                   std::uint64_t seed) {
  if (samples_per_prompt < 2) throw ConfigError("samples_per_prompt must be >= 2 to form pairs");
  const auto samples = sample_all(env, policy, tasks, samples_per_prompt, temperature, seed, 1);
  const auto k = static_cast<std::size_t>(samples_per_prompt);
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    std::vector<const Trajectory*> good, bad;
    for (std::size_t j = 0; j < k; ++j) {
      const Trajectory& t = samples[i * k + j];
      if (!env.is_terminal(t.actions) || t.actions.back() != env.vocab().eos()) continue;
      (t.total_return() > 0.0 ? good : bad).push_back(&t);
    }
    // Pair them up in sample order; surplus responses are dropped.
    for (std::size_t j = 0; j < std::min(good.size(), bad.size()); ++j)
      pairs.push_back({tasks[i], good[j]->actions, bad[j]->actions});
  }
  return pairs;
}

DpoResult dpo_positive_train(const Environment& env, const PolicySnapshot& reference,
                             const TaskSplits& tasks, const DpoConfig& config) {
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("invalid dpo config");
  const Evaluator eval{env, tasks, config.eval_temperature, config.eval_rounds,
                       config.eval_train_tasks, config.workers, config.seed};
  DpoResult result{reference, {}, 0};
  const auto pairs = build_preference_pairs(env, reference, head(tasks.train, config.train_prompts),
                                            config.samples_per_prompt,
                                            config.temperature, derive_seed(config.seed, {1}));
  result.pairs = pairs.size();
  if (pairs.empty()) throw ContractViolation("dpo_positive: no preference pairs could be formed");
  PolicySnapshot policy = reference;
  std::vector<double> params(policy.params().begin(), policy.params().end());
  Adam opt(params.size(), config.lr);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  long long steps = 0;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  auto record = [&](int epoch) {
    IterationMetrics m;
    m.iteration = epoch;
    m.gradient_steps = steps;
    eval(policy, static_cast<std::uint64_t>(epoch), m.train_acc, m.test_acc, m.val_acc);
    result.metrics.push_back(m);
  };
  record(0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {2, static_cast<std::uint64_t>(epoch)}));
    detail::shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<double> grad(params.size(), 0.0);
      double loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const LossAndGrad lg =
            dpo_positive_loss(policy, reference, pairs[order[i]], config.beta, config.lambda_p);
        loss += lg.loss;
        for (std::size_t j = 0; j < grad.size(); ++j)
          grad[j] += lg.grad[j] / static_cast<double>(end - start);
      }
      if (!std::isfinite(loss))
        throw DivergenceError(fmt::format("dpo loss became non-finite in epoch {}", epoch));
      opt.step(params, grad);
      policy = policy.with_params(params);
      ++steps;
    }
    record(epoch);
  }
  result.policy = policy;
  return result;
}

}  // namespace vinelab
