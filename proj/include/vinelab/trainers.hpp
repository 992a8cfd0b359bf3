// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_TRAINERS_HPP_
#define VINELAB_TRAINERS_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vinelab/advantage.hpp"
#include "vinelab/env.hpp"
#include "vinelab/optim.hpp"
#include "vinelab/policy.hpp"
#include "vinelab/records.hpp"
#include "vinelab/value.hpp"

namespace vinelab {

struct TaskSplits {
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> validation;
  std::vector<TaskInstance> test;
};

// Sum over tokens of log pi(y_t | x; y_<t).
double sequence_log_prob(const PolicySnapshot& policy, const TaskInstance& task,
                         std::span<const Token> response, double temperature = 1.0);
// grad += scale * d/dparams sequence_log_prob
void accumulate_sequence_grad(const PolicySnapshot& policy, const TaskInstance& task,
                              std::span<const Token> response, double scale,
                              std::span<double> grad, double temperature = 1.0);
void accumulate_sequence_grad(const PolicySnapshot& policy, const TaskInstance& task,
                              std::span<const Token> response, double scale,
                              PolicySnapshot::GradBatch& grad, double temperature = 1.0);

// ---- supervised pretraining (produces pi_ref) ------------------------------

struct SftConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct SftResult {
  PolicySnapshot policy;
  std::vector<double> epoch_losses;  // [0] before training, then after each epoch
  double heldout_greedy_acc = 0.0;
};

// Mean negative log-likelihood of the reference solutions.
double sft_dataset_loss(const Environment& env, const PolicySnapshot& policy,
                        std::span<const TaskInstance> tasks);

SftResult sft_pretrain(const Environment& env, const PolicySnapshot& init,
                       std::span<const TaskInstance> tasks, const SftConfig& config,
                       std::span<const TaskInstance> heldout = {});

// ---- PPO -------------------------------------------------------------------

// Clipped surrogate with a per-token KL penalty, returned as a loss to
// minimize:
//   -mean_tau sum_t [ min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t) - beta * kl_hat_t ]
// where rho_t = pi(a_t|s_t) / pi_old(a_t|s_t). All log-probs are taken at
// `temperature`.
LossAndGrad ppo_policy_loss(const PolicySnapshot& policy, const PolicySnapshot& old_policy,
                            const PolicySnapshot& reference,
                            std::span<const Trajectory> trajectories,
                            std::span<const AdvantageRecord> advantages, double clip_eps,
                            double kl_coef, double temperature = 1.0);

enum class ValueSource { kValueNet, kMonteCarlo };

struct PpoConfig {
  int iterations = 200;
  int prompts_per_iteration = 32;
  int samples_per_prompt = 8;
  int minibatch_size = 64;  // trajectories; must divide the batch
  int epochs = 2;
  double clip_eps = 0.2;
  double kl_coef = 0.02;
  double value_clip = 0.2;
  double lr_policy = 3e-4;
  double lr_value = 3e-4;
  double temperature = 0.6;
  double gae_lambda = 1.0;
  int mc_rollouts = 9;           // K
  double mc_temperature = 0.0;   // 0: same as `temperature`
  bool normalize_advantages = true;
  double eval_temperature = 0.35;
  int eval_rounds = 16;
  int eval_train_tasks = 128;
  int audit_every = 5;           // 0 disables audits
  int audit_trajectories = 64;
  int audit_top_action_trials = 16;
  int workers = 1;
  std::uint64_t seed = 1;

  int batch_size() const { return prompts_per_iteration * samples_per_prompt; }
  double rollout_temperature() const { return mc_temperature > 0.0 ? mc_temperature : temperature; }
  void validate() const;
};

// Everything needed to continue a run after iteration `next_iteration - 1`.
struct TrainerCheckpoint {
  int next_iteration = 0;
  PolicySnapshot policy;
  std::optional<ValueNet> valnet;
  Adam::State policy_opt;
  Adam::State value_opt;
  PolicySnapshot best_policy;
  double best_val = -1.0;
  int best_iteration = 0;
  IterationMetrics counters;
};

class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_metrics(const IterationMetrics&, double /*wall_ms*/) {}
  virtual void on_value_audit(std::span<const ValueAuditRecord>) {}
  virtual void on_top_action(std::span<const TopActionRecord>) {}
  virtual void on_checkpoint(const TrainerCheckpoint&) {}
};

struct PpoResult {
  std::vector<IterationMetrics> metrics;
  PolicySnapshot final_policy;
  PolicySnapshot best_policy;
  int best_iteration = 0;
  std::vector<ValueAuditRecord> value_audit;
  std::vector<TopActionRecord> top_actions;
};

// PPO when `source` is kValueNet (GAE over a learned critic), VinePPO when
// kMonteCarlo (K-rollout step advantages). Metrics record i describes the
// policy after i updates; the last record (i = iterations) is evaluation
// only. Throws DivergenceError on non-finite losses; the observer has by
// then received the last good checkpoint.
PpoResult run_ppo(const Environment& env, const PpoConfig& config, const PolicySnapshot& reference,
                  const TaskSplits& tasks, ValueSource source, RunObserver* observer = nullptr,
                  const TrainerCheckpoint* resume = nullptr);

// ---- RestEM ----------------------------------------------------------------

struct RestemConfig {
  int iterations = 4;
  int train_prompts = 1024;  // leading train prompts sampled each iteration; 0: all
  int samples_per_prompt = 8;
  int epochs = 8;
  int batch_size = 32;
  double lr = 1e-3;
  double temperature = 0.6;
  double eval_temperature = 0.35;
  int eval_rounds = 16;
  int eval_train_tasks = 128;
  int workers = 1;
  std::uint64_t seed = 1;
};

struct RestemPoint {
  int iteration = 0;
  int epoch = 0;  // 0: the sampling checkpoint before any training
  long long gradient_steps = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double val_acc = 0.0;
};

struct RestemResult {
  PolicySnapshot policy;
  std::vector<RestemPoint> points;
  std::vector<int> chosen_epochs;  // per iteration
};

// Mean over all samples of R(y) * grad log P(y|x): maximum likelihood on the
// correct samples, normalized by the total sample count.
std::vector<double> restem_gradient(const PolicySnapshot& policy,
                                    std::span<const Trajectory> samples);
// Baseline-free REINFORCE on the same samples, computed token by token.
std::vector<double> reinforce_gradient(const PolicySnapshot& policy,
                                       std::span<const Trajectory> samples);

// Each iteration: sample from the current checkpoint, keep correct responses,
// retrain the base model on them and keep the epoch right before validation
// accuracy first drops. Throws ContractViolation if nothing is ever correct.
RestemResult restem_train(const Environment& env, const PolicySnapshot& reference,
                          const TaskSplits& tasks, const RestemConfig& config);

// ---- DPO-Positive ----------------------------------------------------------

struct PreferencePair {
  TaskInstance task;
  std::vector<Token> chosen;    // reward 1
  std::vector<Token> rejected;  // reward 0
};

// -log sigmoid(beta (dw - dl) - lambda_p max(0, log pi_ref(y_w) - log pi(y_w)))
// with d_i = log pi(y_i|x) - log pi_ref(y_i|x).
LossAndGrad dpo_positive_loss(const PolicySnapshot& policy, const PolicySnapshot& reference,
                              const PreferencePair& pair, double beta, double lambda_p);

struct DpoConfig {
  int train_prompts = 1024;  // 0: all
  int samples_per_prompt = 8;
  int epochs = 8;
  int batch_size = 32;
  double lr = 1e-3;
  double beta = 0.1;
  double lambda_p = 5.0;
  double temperature = 0.6;
  double eval_temperature = 0.35;
  int eval_rounds = 16;
  int eval_train_tasks = 128;
  int workers = 1;
  std::uint64_t seed = 1;
};

struct DpoResult {
  PolicySnapshot policy;
  std::vector<IterationMetrics> metrics;  // one per epoch, [0] before training
  std::size_t pairs = 0;
};

std::vector<PreferencePair> build_preference_pairs(const Environment& env,
                                                   const PolicySnapshot& policy,
                                                   std::span<const TaskInstance> tasks,
                                                   int samples_per_prompt, double temperature,
                                                   std::uint64_t seed);

DpoResult dpo_positive_train(const Environment& env, const PolicySnapshot& reference,
                             const TaskSplits& tasks, const DpoConfig& config);

}  // namespace vinelab

#endif  // VINELAB_TRAINERS_HPP_
