// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/env.hpp"

#include <fmt/format.h>

#include <istream>
#include <ostream>
#include <sstream>

#include "vinelab/errors.hpp"
#include "vinelab/rng.hpp"

namespace vinelab {

Vocab::Vocab(int num_digits) : num_digits_(num_digits) {
  if (num_digits < 1) throw ConfigError("vocab needs at least one digit token");
}

EnvConfig EnvConfig::default_env() { return EnvConfig{}; }

EnvConfig EnvConfig::tiny() {
  EnvConfig c;
  c.difficulty = Difficulty{2, 2};
  c.vocab_digits = 2;
  c.max_length = 6;
  return c;
}

void EnvConfig::validate() const {
  if (difficulty.num_operands < 1) throw ConfigError("env.num_operands must be >= 1");
  if (difficulty.base < 2) throw ConfigError("env.base must be >= 2");
  if (difficulty.base > vocab_digits)
    throw ConfigError(fmt::format("env.base ({}) exceeds the number of digit tokens ({})",
                                  difficulty.base, vocab_digits));
  if (max_length < 1) throw ConfigError("env.max_length must be >= 1");
}

std::vector<Token> TokenMdpState::sequence() const {
  std::vector<Token> seq;
  seq.reserve(prompt.size() + generated.size());
  seq.insert(seq.end(), prompt.begin(), prompt.end());
  seq.insert(seq.end(), generated.begin(), generated.end());
  return seq;
}

std::string state_id(const TokenMdpState& state) {
  std::string id;
  for (std::size_t i = 0; i < state.prompt.size(); ++i) {
    if (i) id += '.';
    id += std::to_string(state.prompt[i]);
  }
  id += '|';
  for (std::size_t i = 0; i < state.generated.size(); ++i) {
    if (i) id += '.';
    id += std::to_string(state.generated[i]);
  }
  return id;
}

double Trajectory::total_return() const {
  double sum = 0.0;
  for (double r : rewards) sum += r;
  return sum;
}

std::vector<Token> Trajectory::prefix(std::size_t t) const {
  std::vector<Token> seq(task.prompt);
  seq.insert(seq.end(), actions.begin(), actions.begin() + static_cast<std::ptrdiff_t>(t));
  return seq;
}

Environment::Environment(EnvConfig config) : config_(config), vocab_(config.vocab_digits) {
  config_.validate();
}

TokenMdpState Environment::initial_state(const TaskInstance& task) const {
  if (task.prompt.empty()) throw ContractViolation("prompt must be non-empty");
  return TokenMdpState{task.prompt, {}, false};
}

bool Environment::is_terminal(std::span<const Token> generated) const {
  if (generated.empty()) return false;
  return generated.back() == vocab_.eos() ||
         generated.size() >= static_cast<std::size_t>(config_.max_length);
}

TokenMdpState Environment::transition(const TokenMdpState& state, Token action) const {
  if (state.terminal) throw ContractViolation("transition from a terminal state");
  if (!vocab_.contains(action))
    throw ContractViolation(fmt::format("action {} outside vocabulary of size {}", action,
                                        vocab_.size()));
  TokenMdpState next{state.prompt, state.generated, false};
  next.generated.push_back(action);
  next.terminal = is_terminal(next.generated);
  return next;
}

double Environment::terminal_reward(std::span<const Token> generated,
                                    const TaskInstance& task) const {
  if (!is_terminal(generated)) return 0.0;
  const std::size_t n = generated.size();
  if (generated[n - 1] != vocab_.eos()) return 0.0;  // truncated: no committed answer
  if (n < 2) return 0.0;
  return generated[n - 2] == task.answer ? 1.0 : 0.0;
}

double Environment::reward(const TokenMdpState& state, Token action,
                           const TaskInstance& task) const {
  const TokenMdpState next = transition(state, action);
  return terminal_reward(next.generated, task);
}

TaskInstance Environment::generate_task(std::uint64_t seed) const {
  return vinelab::generate_task(seed, config_.difficulty);
}

std::vector<Token> Environment::reference_solution(const TaskInstance& task) const {
  return vinelab::reference_solution(task, vocab_);
}

TaskInstance generate_task(std::uint64_t seed, const Difficulty& difficulty) {
  if (difficulty.num_operands < 1 || difficulty.base < 2)
    throw ConfigError("invalid difficulty");
  Rng rng(derive_seed(seed, {0x7a5cULL}));
  TaskInstance task;
  task.difficulty = difficulty;
  int sum = 0;
  for (int i = 0; i < difficulty.num_operands; ++i) {
    const int d = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(difficulty.base)));
    task.prompt.push_back(d);
    sum += d;
  }
  task.answer = sum % difficulty.base;
  return task;
}

std::vector<Token> reference_solution(const TaskInstance& task, const Vocab& vocab) {
  std::vector<Token> out;
  int partial = 0;
  for (Token d : task.prompt) {
    partial = (partial + d) % task.difficulty.base;
    out.push_back(partial);
    out.push_back(vocab.sep());
  }
  out.push_back(task.answer);
  out.push_back(vocab.eos());
  return out;
}

std::vector<TaskInstance> generate_tasks(const Environment& env, std::uint64_t seed,
                                         std::size_t count) {
  std::vector<TaskInstance> tasks;
  tasks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) tasks.push_back(env.generate_task(derive_seed(seed, {i})));
  return tasks;
}

std::vector<TaskInstance> enumerate_tasks(const Difficulty& difficulty) {
  std::vector<TaskInstance> tasks;
  std::vector<Token> digits(static_cast<std::size_t>(difficulty.num_operands), 0);
  for (;;) {
    TaskInstance t;
    t.difficulty = difficulty;
    t.prompt = digits;
    int sum = 0;
    for (Token d : digits) sum += d;
    t.answer = sum % difficulty.base;
    tasks.push_back(std::move(t));
    std::size_t i = 0;
    while (i < digits.size() && ++digits[i] == difficulty.base) digits[i++] = 0;
    if (i == digits.size()) break;
  }
  return tasks;
}

void write_tasks(std::ostream& out, std::span<const TaskInstance> tasks) {
  out << "vinelab-tasks 1\n";
  for (const auto& t : tasks) {
    out << "prompt=";
    for (std::size_t i = 0; i < t.prompt.size(); ++i) out << (i ? "," : "") << t.prompt[i];
    out << " answer=" << t.answer << " n=" << t.difficulty.num_operands
        << " base=" << t.difficulty.base << '\n';
  }
}

namespace {

int parse_int(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(fmt::format("task file line {}: bad integer '{}'", line_no, s));
  }
}

}  // namespace

std::vector<TaskInstance> read_tasks(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "vinelab-tasks 1")
    throw FormatError("task file: missing or unsupported header (expected 'vinelab-tasks 1')");
  std::vector<TaskInstance> tasks;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string field;
    TaskInstance t;
    bool has_prompt = false, has_answer = false, has_n = false, has_base = false;
    while (fields >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos)
        throw FormatError(fmt::format("task file line {}: expected key=value", line_no));
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      if (key == "prompt") {
        std::istringstream items(value);
        std::string item;
        while (std::getline(items, item, ',')) t.prompt.push_back(parse_int(item, line_no));
        has_prompt = true;
      } else if (key == "answer") {
        t.answer = parse_int(value, line_no);
        has_answer = true;
      } else if (key == "n") {
        t.difficulty.num_operands = parse_int(value, line_no);
        has_n = true;
      } else if (key == "base") {
        t.difficulty.base = parse_int(value, line_no);
        has_base = true;
      } else {
        throw FormatError(fmt::format("task file line {}: unknown field '{}'", line_no, key));
      }
    }
    if (!(has_prompt && has_answer && has_n && has_base))
      throw FormatError(fmt::format("task file line {}: missing field", line_no));
    if (static_cast<int>(t.prompt.size()) != t.difficulty.num_operands)
      throw FormatError(fmt::format("task file line {}: prompt length != n", line_no));
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace vinelab
