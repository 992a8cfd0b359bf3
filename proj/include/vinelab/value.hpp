// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_VALUE_HPP_
#define VINELAB_VALUE_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vinelab/env.hpp"
#include "vinelab/policy.hpp"

namespace vinelab {

enum class ValueMethod { kNet, kMc, kExact };

std::string_view to_string(ValueMethod method);

struct ValueEstimate {
  double value = 0.0;
  ValueMethod method = ValueMethod::kMc;
  int samples = 0;  // K for kMc, 0 otherwise
  std::string state;
};

inline constexpr std::uint64_t kDefaultLeafBudget = 1'000'000;

// Mean return of K independent completions from `state` (the state's
// generated tokens continue under `policy`). Rollout k uses the stream
// derive_seed(seed, {k}). Terminal states have value 0.
ValueEstimate mc_value(const Environment& env, const PolicySnapshot& policy,
                       const TaskInstance& task, const TokenMdpState& state, int k,
                       double temperature, std::uint64_t seed, std::size_t* tokens = nullptr);

// Exact expectation by enumerating every completion. Throws OracleUnavailable
// when vocab^(max_length - t) exceeds `leaf_budget`.
ValueEstimate exact_value(const Environment& env, const PolicySnapshot& policy,
                          const TaskInstance& task, const TokenMdpState& state,
                          double temperature = 1.0,
                          std::uint64_t leaf_budget = kDefaultLeafBudget);

// Visits every terminal completion with its path probability and return.
void enumerate_completions(const Environment& env, const PolicySnapshot& policy,
                           const TaskInstance& task, const TokenMdpState& state,
                           double temperature,
                           const std::function<void(std::span<const Token>, double, double)>& leaf,
                           std::uint64_t leaf_budget = kDefaultLeafBudget);

// Critic: the policy trunk with a scalar head (w_v: H, b_v: 1) appended.
class ValueNet {
 public:
  // Copies the trunk of an MLP policy; the head starts at zero.
  static ValueNet from_policy(const PolicySnapshot& policy);

  std::span<const double> params() const;
  std::size_t num_params() const { return params().size(); }
  int window() const;
  ValueNet with_params(std::vector<double> params) const;

  double predict(std::span<const Token> sequence) const;
  // grad += d predict / d params * scale
  void backward(std::span<const Token> sequence, double scale, std::span<double> grad) const;

  // Batched backward(); see PolicySnapshot::GradBatch.
  class GradBatch {
   public:
    GradBatch(const ValueNet& valnet, std::span<double> grad);
    ~GradBatch();
    GradBatch(const GradBatch&) = delete;
    GradBatch& operator=(const GradBatch&) = delete;

    void add(std::span<const Token> sequence, double scale);
    void flush();

   private:
    struct State;
    std::unique_ptr<State> state_;
  };

 private:
  struct Impl;
  explicit ValueNet(std::shared_ptr<const Impl> impl);
  std::shared_ptr<const Impl> impl_;
};

ValueEstimate value_net_predict(const ValueNet& valnet, const TokenMdpState& state);

// Value regression targets for one trajectory: states s_0..s_{T-1} as
// prompt ; actions[0..t) with empirical returns G_t.
struct ValueTargets {
  std::vector<std::vector<Token>> states;
  std::vector<double> returns;
};

ValueTargets value_targets(const Trajectory& trajectory);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// 1/2 * mean_tau [ 1/T sum_t max((V - G)^2, (clip(V, V_old - eps, V_old + eps) - G)^2) ]
LossAndGrad value_net_loss(const ValueNet& valnet, const ValueNet& old_valnet,
                           std::span<const ValueTargets> batch, double clip);

}  // namespace vinelab

#endif  // VINELAB_VALUE_HPP_
