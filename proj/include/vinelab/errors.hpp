// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_ERRORS_HPP_
#define VINELAB_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace vinelab {

// Caller broke an operation's precondition (e.g. acting on a terminal state).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid user-facing configuration: bad hyperparameter, unknown key, etc.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The exact enumeration oracle would exceed its leaf budget.
class OracleUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN / inf encountered during optimization.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vinelab

#endif  // VINELAB_ERRORS_HPP_
