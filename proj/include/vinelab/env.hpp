// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_ENV_HPP_
#define VINELAB_ENV_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace vinelab {

using Token = int;

// Token ids: digits 0..num_digits-1, then SEP, then EOS. The padding id used
// by policies for short contexts equals size() and is never an action.
class Vocab {
 public:
  explicit Vocab(int num_digits);

  int size() const { return num_digits_ + 2; }
  int num_digits() const { return num_digits_; }
  Token sep() const { return num_digits_; }
  Token eos() const { return num_digits_ + 1; }
  Token pad() const { return size(); }
  bool is_digit(Token t) const { return t >= 0 && t < num_digits_; }
  bool contains(Token t) const { return t >= 0 && t < size(); }

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  int num_digits_;
};

struct Difficulty {
  int num_operands = 6;  // n
  int base = 10;         // modulus

  friend bool operator==(const Difficulty&, const Difficulty&) = default;
};

struct EnvConfig {
  Difficulty difficulty;
  int vocab_digits = 10;  // number of digit tokens; must be >= base
  int max_length = 14;    // generated tokens per episode

  static EnvConfig default_env();  // n=6, base 10, vocab 12, max_length 14
  static EnvConfig tiny();         // n=2, base 2, vocab 4, max_length 6
  void validate() const;

  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

// A ModSum problem: the prompt lists the operands, the answer is their sum
// modulo `difficulty.base`.
struct TaskInstance {
  std::vector<Token> prompt;
  Token answer = 0;
  Difficulty difficulty;

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

struct TokenMdpState {
  std::vector<Token> prompt;
  std::vector<Token> generated;
  bool terminal = false;

  // prompt ; generated, the sequence a policy conditions on.
  std::vector<Token> sequence() const;

  friend bool operator==(const TokenMdpState&, const TokenMdpState&) = default;
};

// Short printable identifier, e.g. "3.5|3.10.8".
std::string state_id(const TokenMdpState& state);

// One sampled episode. States are implied: s_t = prompt ; actions[0..t).
struct Trajectory {
  TaskInstance task;
  std::vector<Token> actions;
  std::vector<double> rewards;
  std::vector<double> behavior_log_probs;

  std::size_t length() const { return actions.size(); }
  double total_return() const;
  // prompt ; actions[0..t)
  std::vector<Token> prefix(std::size_t t) const;
};

class Environment {
 public:
  explicit Environment(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  int max_length() const { return config_.max_length; }

  TokenMdpState initial_state(const TaskInstance& task) const;
  bool is_terminal(std::span<const Token> generated) const;

  // s_{t+1} = s_t ; [a_t]. Throws ContractViolation on terminal states or
  // out-of-vocabulary actions.
  TokenMdpState transition(const TokenMdpState& state, Token action) const;

  // Terminal-only binary reward: 1 iff the episode ends with EOS right after
  // the correct answer digit. Truncated episodes carry their (zero) reward on
  // the last emitted token.
  double reward(const TokenMdpState& state, Token action, const TaskInstance& task) const;
  // Same rule over a flat generated sequence that ends with `action`.
  double terminal_reward(std::span<const Token> generated_with_action,
                         const TaskInstance& task) const;

  TaskInstance generate_task(std::uint64_t seed) const;
  std::vector<Token> reference_solution(const TaskInstance& task) const;

 private:
  EnvConfig config_;
  Vocab vocab_;
};

TaskInstance generate_task(std::uint64_t seed, const Difficulty& difficulty);
std::vector<Token> reference_solution(const TaskInstance& task, const Vocab& vocab);

// Deterministic task split: `count` tasks drawn from seeds derived from `seed`.
std::vector<TaskInstance> generate_tasks(const Environment& env, std::uint64_t seed,
                                         std::size_t count);
// All base^n distinct tasks (only sensible for tiny difficulties).
std::vector<TaskInstance> enumerate_tasks(const Difficulty& difficulty);

// Task sets as text: header "vinelab-tasks 1", then one record per line:
//   prompt=3,5 answer=8 n=2 base=10
void write_tasks(std::ostream& out, std::span<const TaskInstance> tasks);
std::vector<TaskInstance> read_tasks(std::istream& in);

}  // namespace vinelab

#endif  // VINELAB_ENV_HPP_
