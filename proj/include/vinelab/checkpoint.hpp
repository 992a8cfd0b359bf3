// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef VINELAB_CHECKPOINT_HPP_
#define VINELAB_CHECKPOINT_HPP_

#include <filesystem>
#include <iosfwd>

#include "vinelab/policy.hpp"
#include "vinelab/trainers.hpp"

namespace vinelab {

// Plain-text formats; doubles are written as hex floats so a round trip is
// bit-exact. Readers throw FormatError on anything unexpected.
void write_policy(std::ostream& out, const PolicySnapshot& policy);
PolicySnapshot read_policy(std::istream& in);

void write_trainer_checkpoint(std::ostream& out, const TrainerCheckpoint& ck);
TrainerCheckpoint read_trainer_checkpoint(std::istream& in);

// File helpers; saving goes through a temporary file and a rename.
void save_policy(const std::filesystem::path& path, const PolicySnapshot& policy);
PolicySnapshot load_policy(const std::filesystem::path& path);
void save_trainer_checkpoint(const std::filesystem::path& path, const TrainerCheckpoint& ck);
TrainerCheckpoint load_trainer_checkpoint(const std::filesystem::path& path);

}  // namespace vinelab

#endif  // VINELAB_CHECKPOINT_HPP_
