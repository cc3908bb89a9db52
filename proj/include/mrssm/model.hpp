// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// The multimodal recurrent state-space model: gated deterministic transition,
// prior head, per-modality encoders (experts) and decoders, product-of-experts
// posterior fusion, filtering and open-loop prediction. Also contains the
// concatenation-fusion posterior used as a baseline.
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrssm/distributions.hpp"
#include "mrssm/rng.hpp"
#include "mrssm/tape.hpp"
#include "mrssm/tensor.hpp"

namespace mrssm {

enum class ModalityKind { kDense, kImage };

struct ModalitySpec {
  std::string name;
  ModalityKind kind = ModalityKind::kDense;
  std::vector<int> shape;  // dense: {d}; image: {C,H,W} with H,W divisible by 8
  float lambda = 1.0f;     // reconstruction weight

  int numel() const;
};

enum class FusionMode { kPoe, kConcat };

struct ModelConfig {
  int d_h = 64;      // deterministic state
  int d_s = 16;      // stochastic state
  int d_a = 2;       // action dimension
  int d_embed = 64;  // embedding width
  std::vector<int> conv_channels{8, 16, 32};
  std::vector<ModalitySpec> modalities;
  FusionMode fusion = FusionMode::kPoe;

  int n_modalities() const { return static_cast<int>(modalities.size()); }
  int modality_index(const std::string& name) const;  // -1 if unknown
  void validate() const;
};

// Per-timestep observations: one optional value per modality, aligned with
// ModelConfig::modalities. A value is present iff the optional is engaged.
struct ObservationSet {
  std::vector<std::optional<Tensor>> values;

  int count_present() const;
  bool none_present() const { return count_present() == 0; }
};

// Tape-level counterpart of ObservationSet.
using ObsVars = std::vector<std::optional<Var>>;

// One filtered timestep: deterministic state, stochastic sample, and the
// distributions that produced the sample.
struct LatentState {
  Var h;
  Var s;
  DiagGaussian prior;
  DiagGaussian posterior;
};

struct PredictStep {
  DiagGaussian prior;
  std::map<std::string, Var> decoded_means;
};

// Named learnable tensors, iterated in a stable order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all_mut() { return params_; }
  int total_parameters() const;

 private:
  std::map<std::string, Tensor> params_;
};

class Mrssm {
 public:
  explicit Mrssm(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Draws fresh parameters from the init stream.
  void init_params(Rng& rng);

  // Parameters bound into a tape as leaves.
  struct Bound {
    Tape* tape = nullptr;
    std::map<std::string, Var> p;
    Var at(const std::string& name) const;
  };
  Bound bind(Tape& tape, bool requires_grad) const;

  // Gated recurrent update of the deterministic state.
  Var deterministic_step(const Bound& b, Var h_prev, Var s_prev, Var a_prev) const;
  // Latent prior from the deterministic state.
  DiagGaussian prior_head(const Bound& b, Var h) const;
  // Modality embedding (shared trunk of expert and concat fusion).
  Var encode_trunk(const Bound& b, int mod, Var obs) const;
  // Per-modality expert: conditions only on the current observation.
  DiagGaussian encode_expert(const Bound& b, int mod, Var obs) const;
  // Concatenation-fusion posterior; requires every modality present.
  DiagGaussian encode_concat(const Bound& b, Var h, const ObsVars& obs) const;
  // Observation model; mean matches the modality shape, stddev fixed to 1.
  DiagGaussian decode(const Bound& b, int mod, Var h, Var s) const;

  // h = 0, s = the provided N(0, I) sample.
  LatentState initial_state(const Bound& b, int batch, const Tensor& s0_sample) const;

  // One filtering update. With zero modalities present the posterior is the
  // prior object itself (empty product), bit-exactly.
  LatentState filter_step(const Bound& b, const LatentState& prev, Var action,
                          const ObsVars& obs, const Tensor& noise) const;

  std::vector<LatentState> rollout_filter(const Bound& b, const LatentState& init,
                                          std::span<const Tensor> actions,
                                          std::span<const ObsVars> observations,
                                          std::span<const Tensor> noises) const;

  // Open-loop prediction: no observations consumed. Propagates the prior mean
  // unless sample_mode is set (then noises must cover the horizon).
  std::vector<PredictStep> predict_open_loop(const Bound& b, const LatentState& from,
                                             std::span<const Tensor> actions, bool sample_mode,
                                             std::span<const Tensor> noises,
                                             std::span<const int> decode_mods) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  int image_flat_dim(const ModalitySpec& spec) const;
};

}  // namespace mrssm
