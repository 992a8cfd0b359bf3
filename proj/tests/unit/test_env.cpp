// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "vinelab/env.hpp"
#include "vinelab/errors.hpp"

using namespace vinelab;

TEST_CASE("vocab layout") {
  const Vocab v(10);
  CHECK(v.size() == 12);
  CHECK(v.sep() == 10);
  CHECK(v.eos() == 11);
  CHECK(v.pad() == 12);
  CHECK(v.is_digit(9));
  CHECK_FALSE(v.is_digit(10));
}

TEST_CASE("reference solution earns reward 1, anything else 0") {
  const Environment env(EnvConfig::default_env());
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TaskInstance task = env.generate_task(seed);
    CHECK(task.prompt.size() == 6);
    int sum = 0;
    for (Token d : task.prompt) sum += d;
    CHECK(task.answer == sum % 10);

    auto sol = env.reference_solution(task);
    CHECK(sol.size() == 14);
    TokenMdpState s = env.initial_state(task);
    double total = 0.0;
    for (Token a : sol) {
      total += env.reward(s, a, task);
      s = env.transition(s, a);
    }
    CHECK(s.terminal);
    CHECK(total == 1.0);

    sol[sol.size() - 2] = (task.answer + 1) % 10;
    CHECK(env.terminal_reward(sol, task) == 0.0);
  }
}

TEST_CASE("only the final answer is graded") {
  const Environment env(EnvConfig::default_env());
  const TaskInstance task = env.generate_task(3);
  const std::vector<Token> shortcut{task.answer, env.vocab().eos()};
  CHECK(env.terminal_reward(shortcut, task) == 1.0);
  const std::vector<Token> eos_only{env.vocab().eos()};
  CHECK(env.terminal_reward(eos_only, task) == 0.0);
}

TEST_CASE("truncated episodes are terminal with zero reward") {
  const Environment env(EnvConfig::tiny());
  const TaskInstance task = env.generate_task(1);
  std::vector<Token> gen(static_cast<std::size_t>(env.max_length()), task.answer);
  CHECK(env.is_terminal(gen));
  CHECK(env.terminal_reward(gen, task) == 0.0);
  gen.pop_back();
  CHECK_FALSE(env.is_terminal(gen));
}

TEST_CASE("transition contracts") {
  const Environment env(EnvConfig::tiny());
  const TaskInstance task = env.generate_task(2);
  TokenMdpState s = env.initial_state(task);
  CHECK_THROWS_AS(env.transition(s, 99), ContractViolation);
  CHECK_THROWS_AS(env.transition(s, -1), ContractViolation);
  s = env.transition(s, env.vocab().eos());
  CHECK(s.terminal);
  CHECK_THROWS_AS(env.transition(s, 0), ContractViolation);
}

TEST_CASE("task generation is deterministic and enumerable") {
  const Environment env(EnvConfig::default_env());
  CHECK(env.generate_task(7) == env.generate_task(7));
  CHECK(generate_tasks(env, 5, 20) == generate_tasks(env, 5, 20));
  CHECK(enumerate_tasks(EnvConfig::tiny().difficulty).size() == 4);
  CHECK(enumerate_tasks(Difficulty{3, 3}).size() == 27);
}

TEST_CASE("task files round-trip") {
  const Environment env(EnvConfig::default_env());
  const auto tasks = generate_tasks(env, 9, 12);
  std::stringstream ss;
  write_tasks(ss, tasks);
  CHECK(read_tasks(ss) == tasks);
  std::istringstream bad("prompt=1,2 answer=x n=2 base=10\n");
  CHECK_THROWS(read_tasks(bad));
}

TEST_CASE("env config validation") {
  EnvConfig c = EnvConfig::default_env();
  CHECK_NOTHROW(c.validate());
  c.vocab_digits = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EnvConfig::default_env();
  c.difficulty.num_operands = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
