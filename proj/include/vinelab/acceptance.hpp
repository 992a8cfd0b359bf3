// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_ACCEPTANCE_HPP_
#define VINELAB_ACCEPTANCE_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace vinelab {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  std::filesystem::path work_dir = "acceptance_runs";
  std::vector<int> only;  // empty: all criteria
  // Reuse finished training runs found in work_dir (same resolved config).
  bool reuse_runs = true;
  int workers = 1;
};

// Runs the acceptance criteria in order, logging progress to `log`.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options, std::ostream& log);

// One line per criterion: "[PASS] 3 title: detail (12.3 s)".
void print_acceptance_table(const std::vector<CriterionResult>& results, std::ostream& out);

}  // namespace vinelab

#endif  // VINELAB_ACCEPTANCE_HPP_
