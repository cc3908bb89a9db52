// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Final-pose evaluation: velocity-sequence pose integration, the translation
// error metric, the Control baseline (assumes commands are attained exactly),
// modality-ablation evaluation on held-out trajectories, and the
// terrain-transition breakdown.
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mrssm/dataset_io.hpp"
#include "mrssm/model.hpp"
#include "mrssm/simulator.hpp"

namespace mrssm {

struct Pose {
  double x = 0, y = 0, theta = 0;
};

// Folds advance_pose from the identity pose over equal-length sequences.
Pose integrate_pose(std::span<const double> v, std::span<const double> omega, double dt);

// Euclidean norm of the translation difference; rotation excluded.
double final_pose_error(const Pose& a, const Pose& b);

// Integrates the commanded velocities as if tracking were perfect.
Pose control_baseline(std::span<const Action> actions, double dt);

struct ErrorStats {
  double median = 0, q1 = 0, q3 = 0, rmse = 0;
  int n = 0;

  // Quartiles by linear interpolation of order statistics. n == 0 yields NaN
  // stats with n = 0 (the empty-group flag).
  static ErrorStats from_samples(std::vector<double> samples);
};

struct EvalConfig {
  std::vector<int> horizons{10, 30};  // steps
  int context = 30;                   // filtering steps before each anchor
  int stride = 5;                     // anchor spacing
  std::vector<std::vector<std::string>> ablations;  // modality-name subsets
  int max_threads = 0;                // 0 = hardware concurrency

  void validate() const;
};

// Seam for testing: anything that can predict (v, omega) over a horizon.
class VelocityPredictor {
 public:
  virtual ~VelocityPredictor() = default;
  // subset: modality indices visible during filtering. t is the anchor index
  // into the trajectory arrays; returns H (v, omega) pairs for steps t+1..t+H.
  virtual std::vector<std::pair<double, double>> predict(const Trajectory& traj,
                                                         std::span<const int> subset, int t,
                                                         int horizon) = 0;
};

// Filters `context` steps of subset-masked observations deterministically
// (zero latent noise), then decodes velocity means over an open-loop rollout.
class MrssmPredictor : public VelocityPredictor {
 public:
  MrssmPredictor(const Mrssm& model, int context);
  std::vector<std::pair<double, double>> predict(const Trajectory& traj,
                                                 std::span<const int> subset, int t,
                                                 int horizon) override;

 private:
  const Mrssm& model_;
  int context_;
  int lin_idx_, ang_idx_;
};

struct GroupedStats {
  ErrorStats all, transition, non_transition;
};

struct AblationRow {
  std::string subset_name;
  int horizon = 0;  // steps
  GroupedStats stats;
};

struct EvalReport {
  double dt = 0.1;
  std::vector<AblationRow> rows;            // model, per ablation subset x horizon
  std::vector<AblationRow> control_rows;    // Control baseline, per horizon
};

// Evaluates every (ablation subset, horizon) pair on the validation split.
// Anchors stride over each trajectory; every anchor is filtered for `context`
// steps and predicted open-loop. Concat fusion accepts only the full subset.
EvalReport ablation_eval(VelocityPredictor& predictor, const Dataset& ds, const EvalConfig& cfg,
                         FusionMode fusion);

// Partitions anchor errors by transition mask; returns (on, off) stats.
std::pair<ErrorStats, ErrorStats> transition_breakdown(std::span<const double> errors,
                                                       std::span<const std::uint8_t> masks);

void write_report_csv(const std::string& path, const EvalReport& report);
void write_report_json(const std::string& path, const EvalReport& report);

// "a+b+c" for subsets, "none" for the empty subset.
std::string subset_name(std::span<const std::string> names);

}  // namespace mrssm
