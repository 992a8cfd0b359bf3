// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/policy.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <optional>

#include "mlp_trunk.hpp"
#include "vinelab/errors.hpp"

namespace vinelab {

std::string_view to_string(Architecture arch) {
  return arch == Architecture::kMlp ? "mlp" : "tabular";
}

struct PolicySnapshot::Impl {
  Architecture arch = Architecture::kMlp;
  Vocab vocab{1};
  int window = 8;
  std::vector<double> params;

  // mlp
  MlpShape shape;
  detail::MlpTrunk trunk;
  std::vector<double> proj;

  // tabular
  std::shared_ptr<const std::vector<ContextKey>> contexts;
  std::shared_ptr<const std::map<ContextKey, std::size_t>> rows;

  std::size_t w2_offset() const { return trunk.size(); }
  std::size_t b2_offset() const {
    return w2_offset() + static_cast<std::size_t>(vocab.size()) * shape.hidden_dim;
  }
  std::size_t mlp_size() const { return b2_offset() + static_cast<std::size_t>(vocab.size()); }

  std::optional<std::size_t> row_of(std::span<const Token> sequence) const {
    ContextKey key(static_cast<std::size_t>(window));
    detail::fill_context(sequence, window, vocab.pad(), key);
    auto it = rows->find(key);
    if (it == rows->end()) return std::nullopt;
    return it->second;
  }
};

PolicySnapshot::PolicySnapshot(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

PolicySnapshot PolicySnapshot::mlp(const Vocab& vocab, int window, MlpShape shape,
                                   std::uint64_t seed, double init_scale) {
  if (window < 1 || shape.embed_dim < 1 || shape.hidden_dim < 1)
    throw ConfigError("mlp dimensions must be positive");
  auto impl = std::make_shared<Impl>();
  impl->arch = Architecture::kMlp;
  impl->vocab = vocab;
  impl->window = window;
  impl->shape = shape;
  impl->trunk = detail::MlpTrunk{vocab.size() + 1, shape.embed_dim, shape.hidden_dim, window};
  impl->params.assign(impl->mlp_size(), 0.0);
  if (init_scale > 0.0) {
    Rng rng(derive_seed(seed, {0x1417ULL}));
    auto fill = [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i)
        impl->params[i] = (2.0 * uniform01(rng) - 1.0) * init_scale;
    };
    fill(impl->trunk.emb_offset(), impl->trunk.b1_offset());  // embeddings and w1
    fill(impl->w2_offset(), impl->b2_offset());               // w2; biases stay zero
  }
  impl->proj = impl->trunk.slot_projection(impl->params);
  return PolicySnapshot(std::move(impl));
}

PolicySnapshot PolicySnapshot::tabular(const Vocab& vocab, int window,
                                       std::vector<ContextKey> contexts) {
  if (window < 1) throw ConfigError("window must be positive");
  auto impl = std::make_shared<Impl>();
  impl->arch = Architecture::kTabular;
  impl->vocab = vocab;
  impl->window = window;
  auto rows = std::make_shared<std::map<ContextKey, std::size_t>>();
  for (const auto& key : contexts) {
    if (key.size() != static_cast<std::size_t>(window))
      throw ContractViolation("tabular context has wrong width");
    if (!rows->emplace(key, rows->size()).second)
      throw ContractViolation("duplicate tabular context");
  }
  impl->params.assign(contexts.size() * static_cast<std::size_t>(vocab.size()), 0.0);
  impl->contexts = std::make_shared<const std::vector<ContextKey>>(std::move(contexts));
  impl->rows = std::move(rows);
  return PolicySnapshot(std::move(impl));
}

Architecture PolicySnapshot::architecture() const { return impl_->arch; }
const Vocab& PolicySnapshot::vocab() const { return impl_->vocab; }
int PolicySnapshot::window() const { return impl_->window; }
std::span<const double> PolicySnapshot::params() const { return impl_->params; }

const MlpShape& PolicySnapshot::mlp_shape() const {
  if (impl_->arch != Architecture::kMlp) throw ContractViolation("not an mlp policy");
  return impl_->shape;
}

std::span<const ContextKey> PolicySnapshot::contexts() const {
  if (impl_->arch != Architecture::kTabular) throw ContractViolation("not a tabular policy");
  return *impl_->contexts;
}

PolicySnapshot PolicySnapshot::with_params(std::vector<double> params) const {
  if (params.size() != impl_->params.size())
    throw ContractViolation(fmt::format("parameter vector has {} entries, expected {}",
                                        params.size(), impl_->params.size()));
  auto impl = std::make_shared<Impl>();
  impl->arch = impl_->arch;
  impl->vocab = impl_->vocab;
  impl->window = impl_->window;
  impl->shape = impl_->shape;
  impl->trunk = impl_->trunk;
  impl->contexts = impl_->contexts;
  impl->rows = impl_->rows;
  impl->params = std::move(params);
  if (impl->arch == Architecture::kMlp) impl->proj = impl->trunk.slot_projection(impl->params);
  return PolicySnapshot(std::move(impl));
}

ContextKey PolicySnapshot::context(std::span<const Token> sequence) const {
  ContextKey key(static_cast<std::size_t>(impl_->window));
  detail::fill_context(sequence, impl_->window, impl_->vocab.pad(), key);
  return key;
}

void PolicySnapshot::logits(std::span<const Token> sequence, std::span<double> out) const {
  const Impl& m = *impl_;
  const int v = m.vocab.size();
  if (m.arch == Architecture::kTabular) {
    const auto row = m.row_of(sequence);
    if (!row) {
      std::fill(out.begin(), out.begin() + v, 0.0);
      return;
    }
    std::copy_n(m.params.begin() + static_cast<std::ptrdiff_t>(*row * v), v, out.begin());
    return;
  }
  const int hd = m.shape.hidden_dim;
  Token ctx[64];
  std::vector<Token> big;
  std::span<Token> context;
  if (m.window <= 64) {
    context = std::span<Token>(ctx, static_cast<std::size_t>(m.window));
  } else {
    big.resize(static_cast<std::size_t>(m.window));
    context = big;
  }
  detail::fill_context(sequence, m.window, m.vocab.pad(), context);
  double hbuf[512];
  std::vector<double> hbig;
  std::span<double> h;
  if (hd <= 512) {
    h = std::span<double>(hbuf, static_cast<std::size_t>(hd));
  } else {
    hbig.resize(static_cast<std::size_t>(hd));
    h = hbig;
  }
  m.trunk.forward(m.params, m.proj, context, h);
  const double* w2 = m.params.data() + m.w2_offset();
  const double* b2 = m.params.data() + m.b2_offset();
  for (int a = 0; a < v; ++a) {
    const double* w = w2 + static_cast<std::size_t>(a) * hd;
    double acc = b2[a];
    for (int k = 0; k < hd; ++k) acc += w[k] * h[k];
    out[a] = acc;
  }
}

namespace {

// Output layer of the mlp policy: fills context and activations, adds the
// w2/b2 gradient and returns dL/dh in `dh`.
template <typename Impl>
bool mlp_head_backward(const Impl& m, std::span<const Token> sequence,
                       std::span<const double> dlogits, std::span<double> grad,
                       std::vector<Token>& context, std::vector<double>& h,
                       std::vector<double>& dh) {
  const int v = m.vocab.size();
  const int hd = m.shape.hidden_dim;
  context.resize(static_cast<std::size_t>(m.window));
  detail::fill_context(sequence, m.window, m.vocab.pad(), context);
  h.resize(static_cast<std::size_t>(hd));
  m.trunk.forward(m.params, m.proj, context, h);
  const double* w2 = m.params.data() + m.w2_offset();
  double* gw2 = grad.data() + m.w2_offset();
  double* gb2 = grad.data() + m.b2_offset();
  dh.assign(static_cast<std::size_t>(hd), 0.0);
  bool any = false;
  for (int a = 0; a < v; ++a) {
    const double d = dlogits[a];
    if (d == 0.0) continue;
    any = true;
    gb2[a] += d;
    const double* w = w2 + static_cast<std::size_t>(a) * hd;
    double* gw = gw2 + static_cast<std::size_t>(a) * hd;
    for (int k = 0; k < hd; ++k) {
      gw[k] += d * h[k];
      dh[k] += d * w[k];
    }
  }
  return any;
}

}  // namespace

void PolicySnapshot::backward(std::span<const Token> sequence, std::span<const double> dlogits,
                              std::span<double> grad) const {
  const Impl& m = *impl_;
  const int v = m.vocab.size();
  if (grad.size() != m.params.size()) throw ContractViolation("gradient buffer has wrong size");
  if (m.arch == Architecture::kTabular) {
    const auto row = m.row_of(sequence);
    if (!row) return;
    double* g = grad.data() + *row * static_cast<std::size_t>(v);
    for (int a = 0; a < v; ++a) g[a] += dlogits[a];
    return;
  }
  std::vector<Token> context;
  std::vector<double> h, dh;
  if (mlp_head_backward(m, sequence, dlogits, grad, context, h, dh))
    m.trunk.backward(m.params, context, h, dh, grad);
}

struct PolicySnapshot::GradBatch::State {
  PolicySnapshot policy;
  std::span<double> grad;
  std::optional<detail::TrunkGradBatch> trunk;
  std::vector<Token> context;
  std::vector<double> h, dh;
};

PolicySnapshot::GradBatch::GradBatch(const PolicySnapshot& policy, std::span<double> grad) {
  if (grad.size() != policy.num_params()) throw ContractViolation("gradient buffer has wrong size");
  state_ = std::make_unique<State>(State{policy, grad, std::nullopt, {}, {}, {}});
  if (policy.architecture() == Architecture::kMlp) state_->trunk.emplace(policy.impl_->trunk);
}

PolicySnapshot::GradBatch::~GradBatch() { flush(); }

void PolicySnapshot::GradBatch::add(std::span<const Token> sequence,
                                    std::span<const double> dlogits) {
  State& s = *state_;
  if (!s.trunk) {
    s.policy.backward(sequence, dlogits, s.grad);
    return;
  }
  if (mlp_head_backward(*s.policy.impl_, sequence, dlogits, s.grad, s.context, s.h, s.dh))
    s.trunk->add(s.context, s.h, s.dh, s.grad);
}

void PolicySnapshot::GradBatch::flush() {
  if (state_ && state_->trunk) state_->trunk->fold(state_->policy.impl_->params, state_->grad);
}

std::vector<ContextKey> enumerate_contexts(const Environment& env,
                                           std::span<const TaskInstance> tasks, int window) {
  std::map<ContextKey, bool> seen;
  std::vector<ContextKey> out;
  const Vocab& vocab = env.vocab();
  std::vector<Token> seq;
  std::vector<Token> generated;
  // Depth-first over all non-terminal prefixes.
  auto visit = [&](auto&& self, const TaskInstance& task) -> void {
    ContextKey key(static_cast<std::size_t>(window));
    seq = task.prompt;
    seq.insert(seq.end(), generated.begin(), generated.end());
    detail::fill_context(seq, window, vocab.pad(), key);
    if (seen.emplace(key, true).second) out.push_back(key);
    for (Token a = 0; a < vocab.size(); ++a) {
      generated.push_back(a);
      if (!env.is_terminal(generated)) self(self, task);
      generated.pop_back();
    }
  };
  for (const auto& task : tasks) {
    generated.clear();
    visit(visit, task);
  }
  return out;
}

double softmax_inplace(std::span<double> x, double temperature) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double& v : x) {
    v /= temperature;
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : x) v /= sum;
  return mx + std::log(sum);
}

double log_softmax_at(std::span<const double> logits, Token action, double temperature) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v / temperature - mx);
  return logits[static_cast<std::size_t>(action)] / temperature - mx - std::log(sum);
}

Token sample_from(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<Token>(i);
  }
  // Rounding left u above the total mass; take the last nonzero entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<Token>(i);
  return 0;
}

Token argmax(std::span<const double> values) {
  return static_cast<Token>(std::max_element(values.begin(), values.end()) - values.begin());
}

namespace {

void require_live(const TokenMdpState& state) {
  if (state.terminal) throw ContractViolation("policy queried at a terminal state");
}

void require_action(const PolicySnapshot& policy, Token action) {
  if (!policy.vocab().contains(action))
    throw ContractViolation(fmt::format("action {} outside vocabulary", action));
}

}  // namespace

std::vector<double> logits(const PolicySnapshot& policy, const TokenMdpState& state) {
  require_live(state);
  std::vector<double> out(static_cast<std::size_t>(policy.vocab().size()));
  policy.logits(state.sequence(), out);
  return out;
}

std::vector<double> action_probs(const PolicySnapshot& policy, const TokenMdpState& state,
                                 double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  auto p = logits(policy, state);
  softmax_inplace(p, temperature);
  return p;
}

Token sample_action(const PolicySnapshot& policy, const TokenMdpState& state, double temperature,
                    Rng& rng) {
  const auto p = action_probs(policy, state, temperature);
  return sample_from(p, rng);
}

Token greedy_action(const PolicySnapshot& policy, const TokenMdpState& state) {
  return argmax(logits(policy, state));
}

double log_prob(const PolicySnapshot& policy, const TokenMdpState& state, Token action,
                double temperature) {
  require_action(policy, action);
  return log_softmax_at(logits(policy, state), action, temperature);
}

std::vector<double> grad_log_prob(const PolicySnapshot& policy, const TokenMdpState& state,
                                  Token action, double temperature) {
  require_action(policy, action);
  auto d = action_probs(policy, state, temperature);
  for (auto& v : d) v = -v / temperature;
  d[static_cast<std::size_t>(action)] += 1.0 / temperature;
  std::vector<double> grad(policy.num_params(), 0.0);
  policy.backward(state.sequence(), d, grad);
  return grad;
}

double kl_hat(const PolicySnapshot& policy, const PolicySnapshot& reference,
              const TokenMdpState& state, Token action, double temperature) {
  if (!(policy.vocab() == reference.vocab()))
    throw ContractViolation("policy and reference vocabularies differ");
  const double log_ratio = log_prob(reference, state, action, temperature) -
                           log_prob(policy, state, action, temperature);
  // expm1 keeps r - 1 - log r accurate near r = 1.
  return std::expm1(log_ratio) - log_ratio;
}

double exact_kl(const PolicySnapshot& policy, const PolicySnapshot& reference,
                const TokenMdpState& state, double temperature) {
  const auto lp = logits(policy, state);
  const auto lq = logits(reference, state);
  double kl = 0.0;
  for (std::size_t a = 0; a < lp.size(); ++a) {
    const Token t = static_cast<Token>(a);
    const double log_p = log_softmax_at(lp, t, temperature);
    kl += std::exp(log_p) * (log_p - log_softmax_at(lq, t, temperature));
  }
  return std::max(kl, 0.0);
}

std::uint64_t parameter_hash(const PolicySnapshot& policy) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : policy.params()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace vinelab
