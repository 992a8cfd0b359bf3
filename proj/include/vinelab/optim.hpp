// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_OPTIM_HPP_
#define VINELAB_OPTIM_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "vinelab/errors.hpp"

namespace vinelab {

// Adam without weight decay; minimizes.
class Adam {
 public:
  struct State {
    std::vector<double> m, v;
    long long step = 0;
  };

  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    state_.m.assign(n, 0.0);
    state_.v.assign(n, 0.0);
  }

  void step(std::vector<double>& params, std::span<const double> grad) {
    if (params.size() != grad.size() || params.size() != state_.m.size())
      throw ContractViolation("adam: size mismatch");
    for (double g : grad)
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient");
    ++state_.step;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      state_.m[i] = beta1_ * state_.m[i] + (1.0 - beta1_) * grad[i];
      state_.v[i] = beta2_ * state_.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] -= lr_ * (state_.m[i] / c1) / (std::sqrt(state_.v[i] / c2) + eps_);
    }
  }

  const State& state() const { return state_; }
  void restore(State s) {
    if (s.m.size() != state_.m.size() || s.v.size() != state_.v.size())
      throw ContractViolation("adam: restored state has wrong size");
    state_ = std::move(s);
  }
  double lr() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  State state_;
};

}  // namespace vinelab

#endif  // VINELAB_OPTIM_HPP_
