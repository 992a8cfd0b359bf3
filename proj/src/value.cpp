// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/value.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "mlp_trunk.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/rollout.hpp"

namespace vinelab {

std::string_view to_string(ValueMethod method) {
  switch (method) {
    case ValueMethod::kNet: return "net";
    case ValueMethod::kMc: return "mc";
    case ValueMethod::kExact: return "exact";
  }
  return "?";
}

ValueEstimate mc_value(const Environment& env, const PolicySnapshot& policy,
                       const TaskInstance& task, const TokenMdpState& state, int k,
                       double temperature, std::uint64_t seed, std::size_t* tokens) {
  if (k < 1) throw ConfigError("mc_value needs K >= 1");
  ValueEstimate est{0.0, ValueMethod::kMc, k, state_id(state)};
  if (state.terminal) return est;
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    sum += rollout_return(env, policy, task, state.generated, temperature, rng, tokens);
  }
  est.value = sum / k;
  return est;
}

namespace {

void check_budget(const Environment& env, const TokenMdpState& state, std::uint64_t budget) {
  const int remaining = env.max_length() - static_cast<int>(state.generated.size());
  double leaves = 1.0;
  for (int i = 0; i < remaining; ++i) leaves *= env.vocab().size();
  if (leaves > static_cast<double>(budget))
    throw OracleUnavailable(fmt::format(
        "exact value needs up to {:.3g} leaves, budget is {}; use mc_value instead", leaves,
        budget));
}

}  // namespace

void enumerate_completions(const Environment& env, const PolicySnapshot& policy,
                           const TaskInstance& task, const TokenMdpState& state,
                           double temperature,
                           const std::function<void(std::span<const Token>, double, double)>& leaf,
                           std::uint64_t leaf_budget) {
  check_budget(env, state, leaf_budget);
  if (state.terminal) {
    leaf(state.generated, 1.0, env.terminal_reward(state.generated, task));
    return;
  }
  const std::size_t prompt_len = task.prompt.size();
  std::vector<Token> seq = state.sequence();
  const int v = env.vocab().size();
  auto dfs = [&](auto&& self, double prob) -> void {
    std::vector<double> p(static_cast<std::size_t>(v));
    policy.logits(seq, p);
    softmax_inplace(p, temperature);
    for (Token a = 0; a < v; ++a) {
      const double pa = p[static_cast<std::size_t>(a)];
      seq.push_back(a);
      const std::span<const Token> gen(seq.data() + prompt_len, seq.size() - prompt_len);
      if (env.is_terminal(gen))
        leaf(gen, prob * pa, env.terminal_reward(gen, task));
      else
        self(self, prob * pa);
      seq.pop_back();
    }
  };
  dfs(dfs, 1.0);
}

ValueEstimate exact_value(const Environment& env, const PolicySnapshot& policy,
                          const TaskInstance& task, const TokenMdpState& state,
                          double temperature, std::uint64_t leaf_budget) {
  double value = 0.0;
  enumerate_completions(
      env, policy, task, state, temperature,
      [&](std::span<const Token>, double prob, double ret) { value += prob * ret; }, leaf_budget);
  return ValueEstimate{std::clamp(value, 0.0, 1.0), ValueMethod::kExact, 0, state_id(state)};
}

// ---------------------------------------------------------------------------

struct ValueNet::Impl {
  detail::MlpTrunk trunk;
  Token pad = 0;
  std::vector<double> params;
  std::vector<double> proj;

  std::size_t head_offset() const { return trunk.size(); }
};

ValueNet::ValueNet(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

ValueNet ValueNet::from_policy(const PolicySnapshot& policy) {
  if (policy.architecture() != Architecture::kMlp)
    throw ContractViolation("value net needs an mlp policy trunk");
  const MlpShape& shape = policy.mlp_shape();
  auto impl = std::make_shared<Impl>();
  impl->trunk = detail::MlpTrunk{policy.vocab().size() + 1, shape.embed_dim, shape.hidden_dim,
                                 policy.window()};
  impl->pad = policy.vocab().pad();
  const auto p = policy.params();
  impl->params.assign(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(impl->trunk.size()));
  impl->params.resize(impl->trunk.size() + static_cast<std::size_t>(shape.hidden_dim) + 1, 0.0);
  impl->proj = impl->trunk.slot_projection(impl->params);
  return ValueNet(std::move(impl));
}

std::span<const double> ValueNet::params() const { return impl_->params; }
int ValueNet::window() const { return impl_->trunk.window; }

ValueNet ValueNet::with_params(std::vector<double> params) const {
  if (params.size() != impl_->params.size())
    throw ContractViolation("value net parameter vector has wrong size");
  auto impl = std::make_shared<Impl>();
  impl->trunk = impl_->trunk;
  impl->pad = impl_->pad;
  impl->params = std::move(params);
  impl->proj = impl->trunk.slot_projection(impl->params);
  return ValueNet(std::move(impl));
}

double ValueNet::predict(std::span<const Token> sequence) const {
  const Impl& m = *impl_;
  std::vector<Token> ctx(static_cast<std::size_t>(m.trunk.window));
  detail::fill_context(sequence, m.trunk.window, m.pad, ctx);
  std::vector<double> h(static_cast<std::size_t>(m.trunk.hidden));
  m.trunk.forward(m.params, m.proj, ctx, h);
  const double* w = m.params.data() + m.head_offset();
  double out = w[m.trunk.hidden];
  for (int k = 0; k < m.trunk.hidden; ++k) out += w[k] * h[k];
  return out;
}

void ValueNet::backward(std::span<const Token> sequence, double scale,
                        std::span<double> grad) const {
  const Impl& m = *impl_;
  if (grad.size() != m.params.size()) throw ContractViolation("gradient buffer has wrong size");
  std::vector<Token> ctx(static_cast<std::size_t>(m.trunk.window));
  detail::fill_context(sequence, m.trunk.window, m.pad, ctx);
  std::vector<double> h(static_cast<std::size_t>(m.trunk.hidden));
  m.trunk.forward(m.params, m.proj, ctx, h);
  const double* w = m.params.data() + m.head_offset();
  double* gw = grad.data() + m.head_offset();
  std::vector<double> dh(h.size());
  for (int k = 0; k < m.trunk.hidden; ++k) {
    gw[k] += scale * h[k];
    dh[k] = scale * w[k];
  }
  gw[m.trunk.hidden] += scale;
  m.trunk.backward(m.params, ctx, h, dh, grad);
}

struct ValueNet::GradBatch::State {
  ValueNet valnet;
  std::span<double> grad;
  detail::TrunkGradBatch trunk;
  std::vector<Token> ctx;
  std::vector<double> h, dh;
};

ValueNet::GradBatch::GradBatch(const ValueNet& valnet, std::span<double> grad) {
  if (grad.size() != valnet.num_params()) throw ContractViolation("gradient buffer has wrong size");
  state_ = std::make_unique<State>(
      State{valnet, grad, detail::TrunkGradBatch(valnet.impl_->trunk), {}, {}, {}});
}

ValueNet::GradBatch::~GradBatch() { flush(); }

void ValueNet::GradBatch::add(std::span<const Token> sequence, double scale) {
  State& s = *state_;
  const Impl& m = *s.valnet.impl_;
  s.ctx.resize(static_cast<std::size_t>(m.trunk.window));
  detail::fill_context(sequence, m.trunk.window, m.pad, s.ctx);
  s.h.resize(static_cast<std::size_t>(m.trunk.hidden));
  m.trunk.forward(m.params, m.proj, s.ctx, s.h);
  const double* w = m.params.data() + m.head_offset();
  double* gw = s.grad.data() + m.head_offset();
  s.dh.resize(s.h.size());
  for (int k = 0; k < m.trunk.hidden; ++k) {
    gw[k] += scale * s.h[k];
    s.dh[k] = scale * w[k];
  }
  gw[m.trunk.hidden] += scale;
  s.trunk.add(s.ctx, s.h, s.dh, s.grad);
}

void ValueNet::GradBatch::flush() {
  if (state_) state_->trunk.fold(state_->valnet.impl_->params, state_->grad);
}

ValueEstimate value_net_predict(const ValueNet& valnet, const TokenMdpState& state) {
  return ValueEstimate{valnet.predict(state.sequence()), ValueMethod::kNet, 0, state_id(state)};
}

ValueTargets value_targets(const Trajectory& trajectory) {
  ValueTargets out;
  const std::size_t n = trajectory.length();
  out.states.reserve(n);
  out.returns.assign(n, 0.0);
  double g = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    g += trajectory.rewards[t];
    out.returns[t] = g;
  }
  for (std::size_t t = 0; t < n; ++t) out.states.push_back(trajectory.prefix(t));
  return out;
}

LossAndGrad value_net_loss(const ValueNet& valnet, const ValueNet& old_valnet,
                           std::span<const ValueTargets> batch, double clip) {
  if (batch.empty()) throw ContractViolation("value loss on an empty batch");
  if (!(clip > 0.0)) throw ConfigError("value clip must be positive");
  LossAndGrad out;
  out.grad.assign(valnet.num_params(), 0.0);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  ValueNet::GradBatch acc(valnet, out.grad);
  for (const auto& item : batch) {
    if (item.states.size() != item.returns.size())
      throw ContractViolation("value targets: states and returns differ in length");
    if (item.states.empty()) throw ContractViolation("value targets: empty trajectory");
    const double w = inv_batch / static_cast<double>(item.states.size());
    for (std::size_t t = 0; t < item.states.size(); ++t) {
      const double v = valnet.predict(item.states[t]);
      const double v_old = old_valnet.predict(item.states[t]);
      const double g = item.returns[t];
      const double clipped = std::clamp(v, v_old - clip, v_old + clip);
      const double e_plain = (v - g) * (v - g);
      const double e_clip = (clipped - g) * (clipped - g);
      out.loss += 0.5 * w * std::max(e_plain, e_clip);
      // The clipped branch can only win outside the band, where it is flat in v.
      const double dv = e_plain >= e_clip ? v - g : 0.0;
      if (dv != 0.0) acc.add(item.states[t], w * dv);
    }
  }
  acc.flush();
  return out;
}

}  // namespace vinelab
