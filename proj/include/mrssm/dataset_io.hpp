// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset directory layout:
//   meta.json          schema version, modality specs, dt, trajectory counts
//   traj_<n>.json      scalar fields, lengths, masks, field offsets
//   traj_<n>.f32       little-endian f32 blocks in declared field order
// Round-trips are bit-exact.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "mrssm/model.hpp"
#include "mrssm/simulator.hpp"

namespace mrssm {

struct Dataset {
  std::vector<ModalitySpec> modalities;
  double dt = 0.1;
  int n_train = 0;
  int n_val = 0;
  std::vector<Trajectory> trajs;  // train trajectories first, then validation

  std::span<const Trajectory> train() const {
    return std::span<const Trajectory>(trajs.data(), static_cast<std::size_t>(n_train));
  }
  std::span<const Trajectory> val() const {
    return std::span<const Trajectory>(trajs.data() + n_train, static_cast<std::size_t>(n_val));
  }
};

void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

}  // namespace mrssm
