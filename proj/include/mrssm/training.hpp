// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives and loop. Two subset-based objectives are provided:
//  - elbo_mvae: reconstructs only the modalities in the visible subset, with
//    KL(subset posterior || subset prior).
//  - elbo_new: reconstructs ALL present modalities from the subset rollout,
//    with KL(cached full-set posterior || subset prior). Importance ratios
//    are fixed to one (biased estimator). The full set is always the first
//    subset of a batch so its posteriors can be cached for the others.
// A concat variant trains the concatenation-fusion baseline with no subset
// sampling.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrssm/dataset_io.hpp"
#include "mrssm/model.hpp"
#include "mrssm/rng.hpp"

namespace mrssm {

enum class ElboVariant { kMvae, kNew, kConcat };

const char* elbo_variant_name(ElboVariant v);
ElboVariant elbo_variant_from_name(const std::string& name);

struct TrainingConfig {
  double beta = 1.0;
  double lr = 1e-3;
  double grad_clip = 10.0;
  int subsets_per_batch = 1;  // extra random subsets per batch (k)
  int seq_len = 50;
  int batch_size = 16;
  int epochs = 40;
  std::uint64_t seed = 1234;
  ElboVariant elbo = ElboVariant::kNew;
  std::string metrics_path;  // JSON-lines sink; empty disables the file
  bool verbose = false;

  void validate() const;
};

// Ordered modality subsets for one batch; the first is always the full set.
struct SubsetSchedule {
  std::vector<std::vector<int>> subsets;
};

// [full set] ++ [each singleton] ++ k random nonempty proper subsets
// (duplicates allowed). With a single modality no proper nonempty subsets
// exist, so the k draws are skipped.
SubsetSchedule sample_subsets(int n_modalities, int k, Rng& rng);

// Time-major minibatch of trajectory windows.
struct Batch {
  int B = 0, T = 0;
  std::vector<Tensor> actions;                           // [T] -> (B, d_a)
  std::vector<std::vector<std::optional<Tensor>>> obs;   // [T][mod] -> (B, ...)
};

// Gathers windows batch.obs[t][mod]; a modality is present at a timestep iff
// it is present in every batch element at that timestep.
Batch assemble_batch(const Dataset& ds, std::span<const ModalitySpec> mods,
                     std::span<const int> traj_idx, std::span<const int> starts, int T);

// Batch constants bound into a tape (observation tensors are shared across
// all subset rollouts of the batch).
struct BoundBatch {
  std::vector<Var> actions;
  std::vector<ObsVars> obs;
};
BoundBatch leaf_batch(Tape& tape, const Batch& batch);

struct RolloutResult {
  std::vector<LatentState> states;
};

// Filtering rollout that exposes only `subset` modalities to the posterior.
RolloutResult run_rollout(const Mrssm& model, const Mrssm::Bound& bound, const BoundBatch& bb,
                          std::span<const int> subset, std::span<const Tensor> noises,
                          const Tensor& s0);

struct ElboResult {
  Var loss;                              // scalar node: negative ELBO
  double kl = 0;                         // summed over t, batch-mean
  std::vector<double> kl_per_step;       // batch-mean KL at each timestep
  std::map<std::string, double> recon_mse;  // batch/time-mean squared error
};

ElboResult elbo_mvae(const Mrssm& model, const Mrssm::Bound& bound, const BoundBatch& bb,
                     std::span<const int> subset, const RolloutResult& rollout, double beta);

ElboResult elbo_new(const Mrssm& model, const Mrssm::Bound& bound, const BoundBatch& bb,
                    std::span<const int> subset, const RolloutResult& subset_rollout,
                    std::span<const DiagGaussian> cached_fullset_posteriors, double beta);

struct EpochMetrics {
  int epoch = 0;
  double loss = 0;
  double kl = 0;
  std::map<std::string, double> recon;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
};

// Adam with global-norm gradient clipping.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double grad_clip) : lr_(lr), clip_(grad_clip) {}
  void step(ParamStore& params, const std::map<std::string, Tensor>& grads);

 private:
  double lr_, clip_;
  int t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

// Full training loop: per batch, draw a subset schedule, run the full-set
// rollout first and cache its posteriors, accumulate the configured ELBO over
// all subsets, then take one Adam step. Deterministic given cfg.seed. Aborts
// with a diagnostic naming the first non-finite tensor if the loss goes bad.
TrainResult train_run(const Dataset& ds, Mrssm& model, const TrainingConfig& cfg);

}  // namespace mrssm
