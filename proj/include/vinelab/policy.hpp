// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_POLICY_HPP_
#define VINELAB_POLICY_HPP_

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "vinelab/env.hpp"
#include "vinelab/rng.hpp"

namespace vinelab {

enum class Architecture { kTabular, kMlp };

std::string_view to_string(Architecture arch);

struct MlpShape {
  int embed_dim = 16;
  int hidden_dim = 64;

  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

// Last `window` tokens of a sequence, left-padded with Vocab::pad().
using ContextKey = std::vector<Token>;

// Immutable parameter set of an autoregressive softmax policy. Copies share
// storage; "updating" a policy means building a new snapshot with
// with_params().
//
// MLP parameter layout (P = vocab + 1 embedding rows, the extra one for pad):
//   embedding P x E | w1 H x (W*E) | b1 H | w2 V x H | b2 V
// Tabular layout: one V-wide logit row per registered context, in the order
// given at construction. Unregistered contexts have zero logits and no
// parameters.
class PolicySnapshot {
 public:
  static PolicySnapshot mlp(const Vocab& vocab, int window, MlpShape shape, std::uint64_t seed,
                            double init_scale = 0.05);
  static PolicySnapshot tabular(const Vocab& vocab, int window, std::vector<ContextKey> contexts);

  Architecture architecture() const;
  const Vocab& vocab() const;
  int window() const;
  std::span<const double> params() const;
  std::size_t num_params() const { return params().size(); }
  const MlpShape& mlp_shape() const;
  std::span<const ContextKey> contexts() const;

  // Same architecture and shape, new parameters.
  PolicySnapshot with_params(std::vector<double> params) const;

  ContextKey context(std::span<const Token> sequence) const;

  // `sequence` is prompt ; generated. `out` has vocab-size entries.
  void logits(std::span<const Token> sequence, std::span<double> out) const;

  // grad += (d logits / d params)^T * dlogits
  void backward(std::span<const Token> sequence, std::span<const double> dlogits,
                std::span<double> grad) const;

  // Many backward() calls into one gradient buffer. First-layer terms are
  // gathered per (slot, token) and expanded by flush(), which makes long
  // batches several times cheaper. The destructor flushes.
  class GradBatch {
   public:
    GradBatch(const PolicySnapshot& policy, std::span<double> grad);
    ~GradBatch();
    GradBatch(const GradBatch&) = delete;
    GradBatch& operator=(const GradBatch&) = delete;

    void add(std::span<const Token> sequence, std::span<const double> dlogits);
    void flush();

   private:
    struct State;
    std::unique_ptr<State> state_;
  };

 private:
  struct Impl;
  explicit PolicySnapshot(std::shared_ptr<const Impl> impl);
  std::shared_ptr<const Impl> impl_;
};

// Every context reachable from the given tasks within the env's horizon;
// the natural parameter set for a tabular policy on small configs.
std::vector<ContextKey> enumerate_contexts(const Environment& env,
                                           std::span<const TaskInstance> tasks, int window);

std::vector<double> logits(const PolicySnapshot& policy, const TokenMdpState& state);

// softmax(logits / temperature)
std::vector<double> action_probs(const PolicySnapshot& policy, const TokenMdpState& state,
                                 double temperature = 1.0);

Token sample_action(const PolicySnapshot& policy, const TokenMdpState& state, double temperature,
                    Rng& rng);
// The temperature -> 0 limit: highest logit, lowest id on ties.
Token greedy_action(const PolicySnapshot& policy, const TokenMdpState& state);

double log_prob(const PolicySnapshot& policy, const TokenMdpState& state, Token action,
                double temperature = 1.0);
std::vector<double> grad_log_prob(const PolicySnapshot& policy, const TokenMdpState& state,
                                  Token action, double temperature = 1.0);

// r - log r - 1 with r = pi_ref(a|s) / pi(a|s); nonnegative.
double kl_hat(const PolicySnapshot& policy, const PolicySnapshot& reference,
              const TokenMdpState& state, Token action, double temperature = 1.0);
// KL(pi(.|s) || pi_ref(.|s)) by summation over the vocabulary.
double exact_kl(const PolicySnapshot& policy, const PolicySnapshot& reference,
                const TokenMdpState& state, double temperature = 1.0);

// FNV-1a over the parameter bytes.
std::uint64_t parameter_hash(const PolicySnapshot& policy);

// --- numerics shared by the trainers ---------------------------------------

// In place: x <- softmax(x / temperature). Returns log of the normalizer of
// the scaled logits.
double softmax_inplace(std::span<double> x, double temperature = 1.0);
double log_softmax_at(std::span<const double> logits, Token action, double temperature = 1.0);
// Draw from a normalized probability vector.
Token sample_from(std::span<const double> probs, Rng& rng);
Token argmax(std::span<const double> values);

}  // namespace vinelab

#endif  // VINELAB_POLICY_HPP_
