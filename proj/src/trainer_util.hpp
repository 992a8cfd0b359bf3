// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_SRC_TRAINER_UTIL_HPP_
#define VINELAB_SRC_TRAINER_UTIL_HPP_

#include <span>
#include <vector>

#include "vinelab/advantage.hpp"
#include "vinelab/policy.hpp"
#include "vinelab/value.hpp"

namespace vinelab::detail {

void shuffle(std::vector<std::size_t>& v, Rng& rng);

// out = scale * d log softmax(logits / T)[action] / d logits
void score_dlogits(const PolicySnapshot& policy, std::span<const Token> seq, Token action,
                   double temperature, double scale, std::span<double> out);

std::vector<double> token_log_probs(const PolicySnapshot& policy, const Trajectory& traj,
                                    double temperature);

struct PpoItem {
  const Trajectory* trajectory;
  const AdvantageRecord* advantages;
  const std::vector<double>* old_log_probs;
  const std::vector<double>* ref_log_probs;
};

LossAndGrad ppo_loss(const PolicySnapshot& policy, std::span<const PpoItem> items,
                     double clip_eps, double kl_coef, double temperature);

}  // namespace vinelab::detail

#endif  // VINELAB_SRC_TRAINER_UTIL_HPP_
