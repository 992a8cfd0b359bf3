// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Usage: vinelab_acceptance [work_dir] [criterion...]

#include <cstdlib>
#include <iostream>
#include <string>

#include "vinelab/acceptance.hpp"

int main(int argc, char** argv) {
  vinelab::AcceptanceOptions options;
  if (argc > 1) options.work_dir = argv[1];
  for (int i = 2; i < argc; ++i) options.only.push_back(std::stoi(argv[i]));
  const auto results = vinelab::run_acceptance(options, std::cerr);
  vinelab::print_acceptance_table(results, std::cout);
  for (const auto& r : results)
    if (!r.passed) return EXIT_FAILURE;
  return EXIT_SUCCESS;
}
