// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/config.hpp"

#include <fstream>

#include "mrssm/kernels/kernels.hpp"
#include "mrssm/util.hpp"

namespace mrssm {

using nlohmann::json;

namespace {

const std::map<std::string, json>& default_values() {
  static const std::map<std::string, json> defaults = {
      {"seed", 1234},
      {"data.n_train", 200},
      {"data.n_val", 20},
      {"data.steps", 200},
      {"sim.dt", 0.1},
      {"sim.world_m", 100.0},
      {"sim.cell_m", 0.5},
      {"sim.v_max", 2.0},
      {"sim.gain", 10.0},
      {"sim.sigma_dyn", 0.01},
      {"sim.sigma_obs", 0.02},
      {"sim.sigma_img", 0.02},
      {"sim.patch_m", 8.0},
      {"sim.img_size", 16},
      {"sim.action_hold", 10},
      {"sim.blob_seeds", 60},
      {"sim.mu", json::array({1.0, 0.5, 0.15})},
      {"sim.class_weights", json::array({0.30, 0.35, 0.35})},
      {"model.d_h", 64},
      {"model.d_s", 16},
      {"model.d_embed", 64},
      {"model.conv_channels", json::array({8, 16, 32})},
      {"mod.lin_vel.lambda", 1.0},
      {"mod.ang_vel.lambda", 1.0},
      {"mod.accel.lambda", 1.0},
      {"mod.image.lambda", 0.05},
      {"train.elbo", "new"},
      {"train.beta", 1.0},
      {"train.lr", 0.001},
      {"train.grad_clip", 10.0},
      {"train.epochs", 40},
      {"train.batch_size", 16},
      {"train.seq_len", 50},
      {"train.k_subsets", 1},
      {"eval.horizons", json::array({10, 30})},
      {"eval.context", 30},
      {"eval.stride", 5},
      {"eval.ablations",
       json::array({json::array({"lin_vel", "ang_vel", "accel", "image"}),
                     json::array({"lin_vel", "ang_vel", "accel"}), json::array({"image"})})},
      {"eval.threads", 0},
      {"kernels.backend", "auto"},
  };
  return defaults;
}

void check_known(const std::string& key) {
  check_arg(default_values().count(key) == 1, "config: unknown key '" + key + "'");
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  cfg.values_ = default_values();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path, std::span<const std::string> overrides) {
  RunConfig cfg = defaults();
  if (!path.empty()) {
    std::ifstream in(path);
    check_arg(in.good(), "config: cannot open " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: malformed JSON in " + path + ": " + e.what());
    }
    check_arg(j.is_object(), "config: " + path + " must hold a JSON object of dotted keys");
    for (const auto& [key, value] : j.items()) {
      check_known(key);
      cfg.values_[key] = value;
    }
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    check_arg(eq != std::string::npos && eq > 0,
              "config: --set expects key=value, got '" + ov + "'");
    cfg.set_from_string(ov.substr(0, eq), ov.substr(eq + 1));
  }
  return cfg;
}

void RunConfig::set_from_string(const std::string& key, const std::string& value) {
  check_known(key);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }
  values_[key] = parsed;
}

namespace {
const json& get_checked(const std::map<std::string, json>& values, const std::string& key) {
  check_known(key);
  return values.at(key);
}
}  // namespace

double RunConfig::get_double(const std::string& key) const {
  const json& v = get_checked(values_, key);
  check_arg(v.is_number(), "config: key '" + key + "' must be a number");
  return v.get<double>();
}

int RunConfig::get_int(const std::string& key) const {
  const json& v = get_checked(values_, key);
  check_arg(v.is_number(), "config: key '" + key + "' must be a number");
  return v.get<int>();
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const json& v = get_checked(values_, key);
  check_arg(v.is_number(), "config: key '" + key + "' must be a number");
  return v.get<std::uint64_t>();
}

std::string RunConfig::get_string(const std::string& key) const {
  const json& v = get_checked(values_, key);
  check_arg(v.is_string(), "config: key '" + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  const json& v = get_checked(values_, key);
  check_arg(v.is_array(), "config: key '" + key + "' must be an array");
  return v.get<std::vector<double>>();
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const json& v = get_checked(values_, key);
  check_arg(v.is_array(), "config: key '" + key + "' must be an array");
  return v.get<std::vector<int>>();
}

std::string RunConfig::dump() const {
  json j = json::object();
  for (const auto& [key, value] : values_) j[key] = value;
  return j.dump(2);
}

void RunConfig::write(const std::string& path) const {
  std::ofstream out(path);
  check_arg(out.good(), "config: cannot write " + path);
  out << dump() << "\n";
}

SimParams RunConfig::sim_params() const {
  SimParams p;
  p.dt = get_double("sim.dt");
  p.world_m = get_double("sim.world_m");
  p.cell_m = get_double("sim.cell_m");
  p.v_max = get_double("sim.v_max");
  p.gain = get_double("sim.gain");
  p.sigma_dyn = get_double("sim.sigma_dyn");
  p.sigma_obs = get_double("sim.sigma_obs");
  p.sigma_img = get_double("sim.sigma_img");
  p.patch_m = get_double("sim.patch_m");
  p.img_size = get_int("sim.img_size");
  p.action_hold = get_int("sim.action_hold");
  p.blob_seeds = get_int("sim.blob_seeds");
  p.mu = get_double_list("sim.mu");
  p.class_weights = get_double_list("sim.class_weights");
  return p;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig cfg;
  cfg.d_h = get_int("model.d_h");
  cfg.d_s = get_int("model.d_s");
  cfg.d_a = 2;
  cfg.d_embed = get_int("model.d_embed");
  cfg.conv_channels = get_int_list("model.conv_channels");
  cfg.modalities = sim_modalities(sim_params());
  for (ModalitySpec& m : cfg.modalities) {
    m.lambda = static_cast<float>(get_double("mod." + m.name + ".lambda"));
  }
  cfg.fusion = elbo_variant_from_name(get_string("train.elbo")) == ElboVariant::kConcat
                   ? FusionMode::kConcat
                   : FusionMode::kPoe;
  cfg.validate();
  return cfg;
}

TrainingConfig RunConfig::training_config() const {
  TrainingConfig cfg;
  cfg.beta = get_double("train.beta");
  cfg.lr = get_double("train.lr");
  cfg.grad_clip = get_double("train.grad_clip");
  cfg.subsets_per_batch = get_int("train.k_subsets");
  cfg.seq_len = get_int("train.seq_len");
  cfg.batch_size = get_int("train.batch_size");
  cfg.epochs = get_int("train.epochs");
  cfg.seed = seed();
  cfg.elbo = elbo_variant_from_name(get_string("train.elbo"));
  cfg.validate();
  return cfg;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig cfg;
  cfg.horizons = get_int_list("eval.horizons");
  cfg.context = get_int("eval.context");
  cfg.stride = get_int("eval.stride");
  cfg.max_threads = get_int("eval.threads");
  const json& ab = get_checked(values_, "eval.ablations");
  check_arg(ab.is_array(), "config: eval.ablations must be an array of arrays");
  cfg.ablations.clear();
  for (const json& subset : ab) {
    check_arg(subset.is_array(), "config: eval.ablations entries must be arrays");
    cfg.ablations.push_back(subset.get<std::vector<std::string>>());
  }
  cfg.validate();
  return cfg;
}

void RunConfig::apply_kernel_backend() const {
  const std::string backend = get_string("kernels.backend");
  if (backend == "auto") return;
  if (backend == "scalar") {
    kernels::set_backend(kernels::Backend::kScalar);
  } else if (backend == "avx2") {
    kernels::set_backend(kernels::Backend::kAvx2);
  } else {
    throw std::invalid_argument("config: kernels.backend must be auto|scalar|avx2");
  }
}

}  // namespace mrssm
