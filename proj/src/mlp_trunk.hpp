// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_SRC_MLP_TRUNK_HPP_
#define VINELAB_SRC_MLP_TRUNK_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "vinelab/env.hpp"

namespace vinelab::detail {

// Embedding + one tanh hidden layer over the last `window` tokens. Shared by
// the policy and the value network; parameters live at the front of the
// owning model's flat vector.
struct MlpTrunk {
  int rows = 0;    // embedding rows (vocab + pad)
  int embed = 0;   // E
  int hidden = 0;  // H
  int window = 0;  // W

  std::size_t emb_offset() const { return 0; }
  std::size_t w1_offset() const { return static_cast<std::size_t>(rows) * embed; }
  std::size_t input_dim() const { return static_cast<std::size_t>(window) * embed; }
  std::size_t b1_offset() const { return w1_offset() + static_cast<std::size_t>(hidden) * input_dim(); }
  std::size_t size() const { return b1_offset() + static_cast<std::size_t>(hidden); }

  // proj[(slot * rows + token) * H + h] = sum_e w1[h, slot*E + e] * emb[token, e].
  // Turns the first layer into W row lookups per forward pass.
  std::vector<double> slot_projection(std::span<const double> p) const {
    std::vector<double> proj(static_cast<std::size_t>(window) * rows * hidden, 0.0);
    const double* emb = p.data() + emb_offset();
    const double* w1 = p.data() + w1_offset();
    const std::size_t in = input_dim();
    for (int slot = 0; slot < window; ++slot)
      for (int tok = 0; tok < rows; ++tok) {
        double* dst = proj.data() + (static_cast<std::size_t>(slot) * rows + tok) * hidden;
        const double* e = emb + static_cast<std::size_t>(tok) * embed;
        for (int h = 0; h < hidden; ++h) {
          const double* w = w1 + static_cast<std::size_t>(h) * in + static_cast<std::size_t>(slot) * embed;
          double acc = 0.0;
          for (int k = 0; k < embed; ++k) acc += w[k] * e[k];
          dst[h] = acc;
        }
      }
    return proj;
  }

  // context has exactly `window` entries (pad included).
  void forward(std::span<const double> p, std::span<const double> proj,
               std::span<const Token> context, std::span<double> h_out) const {
    const double* b1 = p.data() + b1_offset();
    for (int h = 0; h < hidden; ++h) h_out[h] = b1[h];
    for (int slot = 0; slot < window; ++slot) {
      const double* src =
          proj.data() + (static_cast<std::size_t>(slot) * rows + context[slot]) * hidden;
      for (int h = 0; h < hidden; ++h) h_out[h] += src[h];
    }
    for (int h = 0; h < hidden; ++h) h_out[h] = std::tanh(h_out[h]);
  }

  // grad += d(trunk)/dp ^T * dh, given activations h from forward().
  void backward(std::span<const double> p, std::span<const Token> context,
                std::span<const double> h_act, std::span<const double> dh,
                std::span<double> grad) const {
    std::vector<double> dpre(static_cast<std::size_t>(hidden));
    for (int h = 0; h < hidden; ++h) dpre[h] = dh[h] * (1.0 - h_act[h] * h_act[h]);
    const double* emb = p.data() + emb_offset();
    const double* w1 = p.data() + w1_offset();
    double* gemb = grad.data() + emb_offset();
    double* gw1 = grad.data() + w1_offset();
    double* gb1 = grad.data() + b1_offset();
    const std::size_t in = input_dim();
    for (int h = 0; h < hidden; ++h) gb1[h] += dpre[h];
    for (int slot = 0; slot < window; ++slot) {
      const std::size_t tok = static_cast<std::size_t>(context[slot]);
      const double* e = emb + tok * embed;
      double* ge = gemb + tok * embed;
      for (int h = 0; h < hidden; ++h) {
        const double d = dpre[h];
        if (d == 0.0) continue;
        const std::size_t off = static_cast<std::size_t>(h) * in + static_cast<std::size_t>(slot) * embed;
        const double* w = w1 + off;
        double* gw = gw1 + off;
        for (int k = 0; k < embed; ++k) {
          gw[k] += d * e[k];
          ge[k] += d * w[k];
        }
      }
    }
  }
};

// Deferred trunk gradient. add() costs O(W*H) per call; first-layer
// gradients are summed per (slot, token) row and expanded into embedding
// and w1 gradients by fold().
class TrunkGradBatch {
 public:
  explicit TrunkGradBatch(const MlpTrunk& trunk)
      : trunk_(trunk),
        dproj_(static_cast<std::size_t>(trunk.window) * trunk.rows * trunk.hidden, 0.0),
        touched_(static_cast<std::size_t>(trunk.window) * trunk.rows, 0) {}

  void add(std::span<const Token> context, std::span<const double> h_act,
           std::span<const double> dh, std::span<double> grad) {
    const int hd = trunk_.hidden;
    double* gb1 = grad.data() + trunk_.b1_offset();
    for (int h = 0; h < hd; ++h) gb1[h] += dh[h] * (1.0 - h_act[h] * h_act[h]);
    for (int slot = 0; slot < trunk_.window; ++slot) {
      const std::size_t idx = static_cast<std::size_t>(slot) * trunk_.rows + context[slot];
      if (!touched_[idx]) {
        touched_[idx] = 1;
        list_.push_back(idx);
      }
      double* d = dproj_.data() + idx * hd;
      for (int h = 0; h < hd; ++h) d[h] += dh[h] * (1.0 - h_act[h] * h_act[h]);
    }
  }

  void fold(std::span<const double> p, std::span<double> grad) {
    const int hd = trunk_.hidden, e_dim = trunk_.embed;
    const std::size_t in = trunk_.input_dim();
    const double* emb = p.data() + trunk_.emb_offset();
    const double* w1 = p.data() + trunk_.w1_offset();
    double* gemb = grad.data() + trunk_.emb_offset();
    double* gw1 = grad.data() + trunk_.w1_offset();
    for (std::size_t idx : list_) {
      const std::size_t slot = idx / static_cast<std::size_t>(trunk_.rows);
      const std::size_t tok = idx % static_cast<std::size_t>(trunk_.rows);
      double* d = dproj_.data() + idx * hd;
      const double* e = emb + tok * e_dim;
      double* ge = gemb + tok * e_dim;
      for (int h = 0; h < hd; ++h) {
        const double dv = d[h];
        d[h] = 0.0;
        if (dv == 0.0) continue;
        const std::size_t off = static_cast<std::size_t>(h) * in + slot * e_dim;
        const double* w = w1 + off;
        double* gw = gw1 + off;
        for (int k = 0; k < e_dim; ++k) {
          gw[k] += dv * e[k];
          ge[k] += dv * w[k];
        }
      }
      touched_[idx] = 0;
    }
    list_.clear();
  }

 private:
  MlpTrunk trunk_;
  std::vector<double> dproj_;
  std::vector<char> touched_;
  std::vector<std::size_t> list_;
};

// Left-padded last-`window` tokens of `sequence`.
inline void fill_context(std::span<const Token> sequence, int window, Token pad,
                         std::span<Token> out) {
  const std::size_t w = static_cast<std::size_t>(window);
  const std::size_t n = sequence.size();
  for (std::size_t i = 0; i < w; ++i) {
    const std::size_t back = w - i;  // distance from the end
    out[i] = back <= n ? sequence[n - back] : pad;
  }
}

}  // namespace vinelab::detail

#endif  // VINELAB_SRC_MLP_TRUNK_HPP_
