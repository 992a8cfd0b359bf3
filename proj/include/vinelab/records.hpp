// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_RECORDS_HPP_
#define VINELAB_RECORDS_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "vinelab/value.hpp"

namespace vinelab {

// One line of metrics.jsonl. Wall-clock time is kept out of this record
// (see timing.jsonl) so that metric logs are reproducible byte for byte.
struct IterationMetrics {
  int iteration = 0;
  long long gradient_steps = 0;
  long long episodes = 0;        // training trajectories sampled so far
  long long rollout_tokens = 0;  // tokens in those trajectories
  long long mc_rollouts = 0;     // value-estimation rollouts (never trained on)
  long long mc_tokens = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;         // sampled at the eval temperature, averaged over rounds
  double test_acc_greedy = 0.0;
  double val_acc = 0.0;
  double exact_kl = 0.0;         // mean per-state KL(pi || pi_ref) by vocab summation
  double batch_reward = 0.0;     // mean return of this iteration's training batch
};

struct ValueAuditRecord {
  int iteration = 0;
  std::string state;
  int step_index = 0;  // boundary index within the trajectory
  int step_count = 0;  // number of steps in the trajectory
  double truth = 0.0;
  double predicted = 0.0;
  ValueMethod method = ValueMethod::kNet;        // predictor
  ValueMethod truth_method = ValueMethod::kMc;   // exact or 256-sample MC
  int samples = 0;                               // K of the predictor when MC
  unsigned long long seed = 0;
};

struct TopActionRecord {
  int iteration = 0;
  std::string state;
  ValueMethod method = ValueMethod::kNet;
  std::vector<double> truth;
  std::vector<double> predicted;
  bool correct = false;
  bool informative = false;  // unique ground-truth best outside the tie band
};

std::string to_json_line(const IterationMetrics& m);
std::string to_json_line(const ValueAuditRecord& r);
std::string to_json_line(const TopActionRecord& r);

// Throws FormatError naming the missing field.
std::vector<IterationMetrics> read_metrics(std::istream& in);

struct AuditLog {
  std::vector<ValueAuditRecord> values;
  std::vector<TopActionRecord> top_actions;
};
AuditLog read_audit(std::istream& in);

}  // namespace vinelab

#endif  // VINELAB_RECORDS_HPP_
