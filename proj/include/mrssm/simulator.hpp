// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// 2-D variable-traction terrain world. Generates ground-truth trajectories
// with proprioceptive channels (linear/angular velocity, a finite-difference
// accelerometer proxy) and an ego-centric camera patch, under a random
// exploration policy. Traction scales how fast velocity tracks its command.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrssm/model.hpp"
#include "mrssm/rng.hpp"
#include "mrssm/tensor.hpp"

namespace mrssm {

struct RobotState {
  double x = 0, y = 0;      // meters
  double theta = 0;         // radians, wrapped to (-pi, pi]
  double v = 0;             // m/s
  double omega = 0;         // rad/s
};

struct Action {
  float v_target = 0;       // m/s
  float omega_target = 0;   // rad/s
};

struct SimParams {
  double dt = 0.1;
  double world_m = 100.0;
  double cell_m = 0.5;
  double v_max = 2.0;
  double gain = 10.0;          // traction gain k: g = min(1, k*mu*dt)
  double sigma_dyn = 0.01;
  double sigma_obs = 0.02;
  double sigma_img = 0.02;
  double patch_m = 8.0;        // camera view depth/width in meters
  int img_size = 16;
  int action_hold = 10;        // steps between command resamples
  int blob_seeds = 60;         // Voronoi seeds for terrain blobs
  std::vector<double> mu{1.0, 0.5, 0.15};
  std::vector<double> class_weights{0.30, 0.35, 0.35};
};

struct TerrainMap {
  int cells_w = 0, cells_h = 0;
  double cell_m = 0.5;
  std::vector<std::uint8_t> cls;                // row-major [cy*cells_w + cx]
  std::vector<double> mu;                       // per class
  std::vector<std::array<float, 3>> colors;     // per class display color

  double world_w() const { return cells_w * cell_m; }
  double world_h() const { return cells_h * cell_m; }
  bool inside(double x, double y) const {
    return x >= 0 && y >= 0 && x < world_w() && y < world_h();
  }
  int class_at(double x, double y) const;  // -1 off the map
  double mu_at(double x, double y) const;  // requires inside(x,y)
};

// Terrain classes in random blobs (nearest-seed partition).
TerrainMap make_terrain_map(const SimParams& p, Rng& rng);

// Wraps an angle into (-pi, pi].
double wrap_angle(double theta);

// Exact unicycle arc (straight-line form when |omega| < 1e-8).
void advance_pose(double& x, double& y, double& theta, double v, double omega, double dt);

// First-order traction-limited tracking followed by the exact arc update.
// noise == nullptr disables process noise.
RobotState step_dynamics(const RobotState& s, const Action& a, double mu, double dt,
                         double gain, double sigma_dyn, Rng* noise);

// Ego-centric heading-aligned crop of the terrain ahead; the robot sits at
// bottom-center. Bilinear color sampling; off-map regions use a reserved
// color; additive pixel noise when noise != nullptr. Values clamped to [0,1].
Tensor render_patch(const TerrainMap& map, const RobotState& s, const SimParams& p, Rng* noise);

struct Trajectory {
  double dt = 0.1;
  RobotState init_state;
  std::vector<Action> actions;                         // length T
  std::vector<RobotState> states;                      // ground truth, length T
  std::vector<int> terrain;                            // class under robot, length T
  std::map<std::string, std::vector<float>> obs;       // modality -> T * numel
  std::map<std::string, std::vector<std::uint8_t>> mask;  // modality -> T

  int length() const { return static_cast<int>(actions.size()); }
  // One timestep as an ObservationSet in the order of `mods`, honoring masks.
  ObservationSet observation_at(int t, std::span<const ModalitySpec> mods) const;
};

// The four standard channels generated by this simulator.
std::vector<ModalitySpec> sim_modalities(const SimParams& p);

// Random exploration rollout; truncates if the robot leaves the map (minimum
// length 2 enforced). Deterministic given the rng state.
Trajectory gen_trajectory(const TerrainMap& map, const SimParams& p, int steps, Rng rng,
                          std::optional<RobotState> init = std::nullopt);

// mask[t] is true iff the terrain class under the robot changes within
// [t, t+window] (forward window: the prediction must anticipate the change).
std::vector<std::uint8_t> label_transitions(const Trajectory& traj, int window);

}  // namespace mrssm
