// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat map of dotted keys with JSON values. Defaults are
// built in; a JSON config file overrides defaults; --set key=value flags
// override both. Unknown keys are rejected. Every run writes the fully
// resolved config next to its outputs.
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrssm/eval.hpp"
#include "mrssm/model.hpp"
#include "mrssm/simulator.hpp"
#include "mrssm/training.hpp"

namespace mrssm {

class RunConfig {
 public:
  static RunConfig defaults();
  // path may be empty (defaults only); overrides are "key=value" strings.
  static RunConfig load(const std::string& path, std::span<const std::string> overrides);

  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // value is parsed as JSON; if that fails it is taken as a string
  void set_from_string(const std::string& key, const std::string& value);

  std::string dump() const;
  void write(const std::string& path) const;

  std::uint64_t seed() const { return get_u64("seed"); }
  SimParams sim_params() const;
  ModelConfig model_config() const;  // fusion follows train.elbo
  TrainingConfig training_config() const;
  EvalConfig eval_config() const;
  // Applies kernels.backend ("auto" | "scalar" | "avx2").
  void apply_kernel_backend() const;

 private:
  std::map<std::string, nlohmann::json> values_;
};

}  // namespace mrssm
