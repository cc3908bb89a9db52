// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/model.hpp"

#include <cmath>
#include <set>

#include "mrssm/util.hpp"

namespace mrssm {

namespace {

// softplus(0.5413) ~= 1: decent initial stddev for prior/expert heads
constexpr float kRawStdInit = 0.5413f;

Var dense(Tape& t, Var x, Var w, Var b) { return t.add(t.matmul(x, w), b); }

Tensor xavier(Rng& rng, std::vector<int> shape, int fan_in, int fan_out) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  for (int i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(-a, a));
  return t;
}

}  // namespace

int ModalitySpec::numel() const {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

int ModelConfig::modality_index(const std::string& name) const {
  for (int i = 0; i < n_modalities(); ++i) {
    if (modalities[static_cast<std::size_t>(i)].name == name) return i;
  }
  return -1;
}

void ModelConfig::validate() const {
  check_arg(d_h > 0 && d_s > 0 && d_a > 0 && d_embed > 0, "ModelConfig: dims must be positive");
  check_arg(conv_channels.size() == 3, "ModelConfig: conv_channels must list 3 layers");
  check_arg(!modalities.empty(), "ModelConfig: at least one modality required");
  std::set<std::string> names;
  for (const ModalitySpec& m : modalities) {
    check_arg(names.insert(m.name).second, "ModelConfig: duplicate modality name " + m.name);
    check_arg(m.lambda >= 0.0f, "ModelConfig: lambda must be >= 0 for " + m.name);
    if (m.kind == ModalityKind::kDense) {
      check_arg(m.shape.size() == 1 && m.shape[0] > 0,
                "ModelConfig: dense modality " + m.name + " needs shape {d}");
    } else {
      check_arg(m.shape.size() == 3, "ModelConfig: image modality " + m.name + " needs {C,H,W}");
      check_arg(m.shape[1] % 8 == 0 && m.shape[2] % 8 == 0 && m.shape[1] >= 8 && m.shape[2] >= 8,
                "ModelConfig: image dims of " + m.name + " must be multiples of 8");
    }
  }
}

int ObservationSet::count_present() const {
  int n = 0;
  for (const auto& v : values) n += v.has_value() ? 1 : 0;
  return n;
}

void ParamStore::add(const std::string& name, Tensor t) {
  check_arg(params_.emplace(name, std::move(t)).second, "ParamStore: duplicate param " + name);
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  check_arg(it != params_.end(), "ParamStore: unknown param " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  check_arg(it != params_.end(), "ParamStore: unknown param " + name);
  return it->second;
}

int ParamStore::total_parameters() const {
  int n = 0;
  for (const auto& [k, v] : params_) n += v.numel();
  return n;
}

Var Mrssm::Bound::at(const std::string& name) const {
  auto it = p.find(name);
  check_arg(it != p.end(), "Mrssm::Bound: unknown param " + name);
  return it->second;
}

Mrssm::Mrssm(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

int Mrssm::image_flat_dim(const ModalitySpec& spec) const {
  return cfg_.conv_channels[2] * (spec.shape[1] / 8) * (spec.shape[2] / 8);
}

void Mrssm::init_params(Rng& rng) {
  params_ = ParamStore();
  const int dh = cfg_.d_h, ds = cfg_.d_s, da = cfg_.d_a, de = cfg_.d_embed;
  const int c1 = cfg_.conv_channels[0], c2 = cfg_.conv_channels[1], c3 = cfg_.conv_channels[2];

  auto add_dense = [&](const std::string& name, int in, int out, float bias_fill = 0.0f) {
    params_.add(name + ".W", xavier(rng, {in, out}, in, out));
    params_.add(name + ".b", Tensor::full({out}, bias_fill));
  };
  auto add_conv = [&](const std::string& name, int f, int c, int k) {
    params_.add(name + ".W", xavier(rng, {f, c, k, k}, c * k * k, f * k * k));
    params_.add(name + ".b", Tensor({f}));
  };
  // transposed conv weights are stored (C_in, C_out, k, k)
  auto add_deconv = [&](const std::string& name, int cin, int cout, int k) {
    params_.add(name + ".W", xavier(rng, {cin, cout, k, k}, cin * k * k, cout * k * k));
    params_.add(name + ".b", Tensor({cout}));
  };
  // head producing (mean, raw_std): raw-std biases start near softplus^-1(1)
  auto add_gauss_head = [&](const std::string& name, int in) {
    params_.add(name + ".W", xavier(rng, {in, 2 * ds}, in, 2 * ds));
    Tensor b({2 * ds});
    for (int i = ds; i < 2 * ds; ++i) b[i] = kRawStdInit;
    params_.add(name + ".b", std::move(b));
  };

  add_dense("trans.embed", ds + da, de);
  params_.add("trans.gru.Wx", xavier(rng, {de, 3 * dh}, de, 3 * dh));
  params_.add("trans.gru.Wh", xavier(rng, {dh, 3 * dh}, dh, 3 * dh));
  params_.add("trans.gru.b", Tensor({3 * dh}));
  add_dense("prior.l1", dh, de);
  add_gauss_head("prior.head", de);

  for (const ModalitySpec& m : cfg_.modalities) {
    const std::string enc = "enc." + m.name;
    const std::string dec = "dec." + m.name;
    if (m.kind == ModalityKind::kDense) {
      add_dense(enc + ".l1", m.shape[0], de);
      add_dense(enc + ".l2", de, de);
      add_dense(dec + ".l1", dh + ds, de);
      add_dense(dec + ".out", de, m.shape[0]);
    } else {
      const int ch = m.shape[0];
      add_conv(enc + ".conv1", c1, ch, 3);
      add_conv(enc + ".conv2", c2, c1, 3);
      add_conv(enc + ".conv3", c3, c2, 3);
      add_dense(enc + ".fc", image_flat_dim(m), de);
      add_dense(dec + ".fc1", dh + ds, de);
      add_dense(dec + ".fc2", de, image_flat_dim(m));
      add_deconv(dec + ".deconv1", c3, c2, 4);
      add_deconv(dec + ".deconv2", c2, c1, 4);
      add_deconv(dec + ".deconv3", c1, ch, 4);
    }
    add_gauss_head(enc + ".head", de);
  }

  if (cfg_.fusion == FusionMode::kConcat) {
    add_dense("concat.l1", dh + cfg_.n_modalities() * de, de);
    add_gauss_head("concat.head", de);
  }
}

Mrssm::Bound Mrssm::bind(Tape& tape, bool requires_grad) const {
  Bound b;
  b.tape = &tape;
  for (const auto& [name, tensor] : params_.all()) {
    Tensor copy = tensor;
    copy.requires_grad = requires_grad;
    b.p.emplace(name, tape.leaf(std::move(copy)));
  }
  return b;
}

Var Mrssm::deterministic_step(const Bound& b, Var h_prev, Var s_prev, Var a_prev) const {
  Tape& t = *b.tape;
  const int dh = cfg_.d_h;
  check_arg(t.value(h_prev).rank() == 2 && t.value(h_prev).dim(1) == dh,
            "deterministic_step: h_prev must be (B," + std::to_string(dh) + "), got " +
                t.value(h_prev).shape_str());
  check_arg(t.value(s_prev).rank() == 2 && t.value(s_prev).dim(1) == cfg_.d_s,
            "deterministic_step: s_prev must be (B," + std::to_string(cfg_.d_s) + "), got " +
                t.value(s_prev).shape_str());
  check_arg(t.value(a_prev).rank() == 2 && t.value(a_prev).dim(1) == cfg_.d_a,
            "deterministic_step: action must be (B," + std::to_string(cfg_.d_a) + "), got " +
                t.value(a_prev).shape_str());

  const Var parts[] = {s_prev, a_prev};
  const Var x = t.tanh(dense(t, t.concat(parts, 1), b.at("trans.embed.W"), b.at("trans.embed.b")));
  const Var gx = dense(t, x, b.at("trans.gru.Wx"), b.at("trans.gru.b"));
  const Var gh = t.matmul(h_prev, b.at("trans.gru.Wh"));

  const Var r = t.sigmoid(t.add(t.slice(gx, 1, 0, dh), t.slice(gh, 1, 0, dh)));
  const Var z = t.sigmoid(t.add(t.slice(gx, 1, dh, dh), t.slice(gh, 1, dh, dh)));
  const Var n = t.tanh(t.add(t.slice(gx, 1, 2 * dh, dh), t.mul(r, t.slice(gh, 1, 2 * dh, dh))));
  const Var one_minus_z = t.add_scalar(t.scale(z, -1.0f), 1.0f);
  return t.add(t.mul(z, h_prev), t.mul(one_minus_z, n));
}

DiagGaussian Mrssm::prior_head(const Bound& b, Var h) const {
  Tape& t = *b.tape;
  const Var l = t.tanh(dense(t, h, b.at("prior.l1.W"), b.at("prior.l1.b")));
  const Var out = dense(t, l, b.at("prior.head.W"), b.at("prior.head.b"));
  return gaussian_from_raw(t, t.slice(out, 1, 0, cfg_.d_s), t.slice(out, 1, cfg_.d_s, cfg_.d_s));
}

Var Mrssm::encode_trunk(const Bound& b, int mod, Var obs) const {
  Tape& t = *b.tape;
  const ModalitySpec& spec = cfg_.modalities[static_cast<std::size_t>(mod)];
  const std::string enc = "enc." + spec.name;
  const Tensor& v = t.value(obs);
  if (spec.kind == ModalityKind::kDense) {
    check_arg(v.rank() == 2 && v.dim(1) == spec.shape[0],
              "encode: observation for " + spec.name + " must be (B," +
                  std::to_string(spec.shape[0]) + "), got " + v.shape_str());
    Var e = t.tanh(dense(t, obs, b.at(enc + ".l1.W"), b.at(enc + ".l1.b")));
    return t.tanh(dense(t, e, b.at(enc + ".l2.W"), b.at(enc + ".l2.b")));
  }
  check_arg(v.rank() == 4 && v.dim(1) == spec.shape[0] && v.dim(2) == spec.shape[1] &&
                v.dim(3) == spec.shape[2],
            "encode: observation for " + spec.name + " must be (B," +
                std::to_string(spec.shape[0]) + "," + std::to_string(spec.shape[1]) + "," +
                std::to_string(spec.shape[2]) + "), got " + v.shape_str());
  const int batch = v.dim(0);  // copied out: ops below invalidate the reference
  Var y = obs;
  for (int layer = 1; layer <= 3; ++layer) {
    const std::string conv = enc + ".conv" + std::to_string(layer);
    y = t.conv2d(y, b.at(conv + ".W"), 2, 1);
    y = t.tanh(t.add_channel_bias(y, b.at(conv + ".b")));
  }
  y = t.reshape(y, {batch, image_flat_dim(spec)});
  return t.tanh(dense(t, y, b.at(enc + ".fc.W"), b.at(enc + ".fc.b")));
}

DiagGaussian Mrssm::encode_expert(const Bound& b, int mod, Var obs) const {
  Tape& t = *b.tape;
  const ModalitySpec& spec = cfg_.modalities[static_cast<std::size_t>(mod)];
  const Var e = encode_trunk(b, mod, obs);
  const Var out = dense(t, e, b.at("enc." + spec.name + ".head.W"),
                        b.at("enc." + spec.name + ".head.b"));
  return gaussian_from_raw(t, t.slice(out, 1, 0, cfg_.d_s), t.slice(out, 1, cfg_.d_s, cfg_.d_s));
}

DiagGaussian Mrssm::encode_concat(const Bound& b, Var h, const ObsVars& obs) const {
  Tape& t = *b.tape;
  check_arg(cfg_.fusion == FusionMode::kConcat,
            "encode_concat: model was not built with concat fusion");
  check_arg(static_cast<int>(obs.size()) == cfg_.n_modalities(),
            "encode_concat: observation list size mismatch");
  std::vector<Var> parts{h};
  for (int i = 0; i < cfg_.n_modalities(); ++i) {
    check_arg(obs[static_cast<std::size_t>(i)].has_value(),
              "encode_concat: modality '" + cfg_.modalities[static_cast<std::size_t>(i)].name +
                  "' is missing; concat fusion requires all modalities");
    parts.push_back(encode_trunk(b, i, *obs[static_cast<std::size_t>(i)]));
  }
  const Var x = t.concat(parts, 1);
  const Var l = t.tanh(dense(t, x, b.at("concat.l1.W"), b.at("concat.l1.b")));
  const Var out = dense(t, l, b.at("concat.head.W"), b.at("concat.head.b"));
  return gaussian_from_raw(t, t.slice(out, 1, 0, cfg_.d_s), t.slice(out, 1, cfg_.d_s, cfg_.d_s));
}

DiagGaussian Mrssm::decode(const Bound& b, int mod, Var h, Var s) const {
  Tape& t = *b.tape;
  const ModalitySpec& spec = cfg_.modalities[static_cast<std::size_t>(mod)];
  const std::string dec = "dec." + spec.name;
  const Var parts[] = {h, s};
  const Var hs = t.concat(parts, 1);
  const int batch = t.value(h).dim(0);
  if (spec.kind == ModalityKind::kDense) {
    const Var l = t.tanh(dense(t, hs, b.at(dec + ".l1.W"), b.at(dec + ".l1.b")));
    const Var mean = dense(t, l, b.at(dec + ".out.W"), b.at(dec + ".out.b"));
    return DiagGaussian{mean, t.constant(Tensor::full({batch, spec.shape[0]}, 1.0f))};
  }
  const Var l1 = t.tanh(dense(t, hs, b.at(dec + ".fc1.W"), b.at(dec + ".fc1.b")));
  const Var l2 = t.tanh(dense(t, l1, b.at(dec + ".fc2.W"), b.at(dec + ".fc2.b")));
  Var y = t.reshape(l2, {batch, cfg_.conv_channels[2], spec.shape[1] / 8, spec.shape[2] / 8});
  y = t.conv_transpose2d(y, b.at(dec + ".deconv1.W"), 2, 1);
  y = t.tanh(t.add_channel_bias(y, b.at(dec + ".deconv1.b")));
  y = t.conv_transpose2d(y, b.at(dec + ".deconv2.W"), 2, 1);
  y = t.tanh(t.add_channel_bias(y, b.at(dec + ".deconv2.b")));
  y = t.conv_transpose2d(y, b.at(dec + ".deconv3.W"), 2, 1);
  y = t.add_channel_bias(y, b.at(dec + ".deconv3.b"));
  return DiagGaussian{
      y, t.constant(Tensor::full({batch, spec.shape[0], spec.shape[1], spec.shape[2]}, 1.0f))};
}

LatentState Mrssm::initial_state(const Bound& b, int batch, const Tensor& s0_sample) const {
  Tape& t = *b.tape;
  check_arg(s0_sample.rank() == 2 && s0_sample.dim(0) == batch && s0_sample.dim(1) == cfg_.d_s,
            "initial_state: s0 sample must be (B,d_s), got " + s0_sample.shape_str());
  LatentState st;
  st.h = t.constant(Tensor({batch, cfg_.d_h}));
  st.s = t.constant(s0_sample);
  st.prior = unit_gaussian(t, {batch, cfg_.d_s});
  st.posterior = st.prior;
  return st;
}

LatentState Mrssm::filter_step(const Bound& b, const LatentState& prev, Var action,
                               const ObsVars& obs, const Tensor& noise) const {
  Tape& t = *b.tape;
  check_arg(static_cast<int>(obs.size()) == cfg_.n_modalities(),
            "filter_step: observation list size mismatch");
  LatentState st;
  st.h = deterministic_step(b, prev.h, prev.s, action);
  st.prior = prior_head(b, st.h);

  int present = 0;
  for (const auto& o : obs) present += o.has_value() ? 1 : 0;

  if (present == 0) {
    st.posterior = st.prior;  // empty product: pure prediction
  } else if (cfg_.fusion == FusionMode::kConcat) {
    st.posterior = encode_concat(b, st.h, obs);
  } else {
    std::vector<DiagGaussian> experts;
    experts.push_back(st.prior);
    for (int i = 0; i < cfg_.n_modalities(); ++i) {
      if (obs[static_cast<std::size_t>(i)].has_value()) {
        experts.push_back(encode_expert(b, i, *obs[static_cast<std::size_t>(i)]));
      }
    }
    st.posterior = poe_fuse(t, experts);
  }
  st.s = rsample(t, st.posterior, noise);
  return st;
}

std::vector<LatentState> Mrssm::rollout_filter(const Bound& b, const LatentState& init,
                                               std::span<const Tensor> actions,
                                               std::span<const ObsVars> observations,
                                               std::span<const Tensor> noises) const {
  check_arg(actions.size() == observations.size() && actions.size() == noises.size(),
            "rollout_filter: sequence length mismatch (actions " +
                std::to_string(actions.size()) + ", observations " +
                std::to_string(observations.size()) + ", noises " +
                std::to_string(noises.size()) + ")");
  std::vector<LatentState> out;
  out.reserve(actions.size());
  const LatentState* prev = &init;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    out.push_back(filter_step(b, *prev, b.tape->constant(actions[i]), observations[i], noises[i]));
    prev = &out.back();
  }
  return out;
}

std::vector<PredictStep> Mrssm::predict_open_loop(const Bound& b, const LatentState& from,
                                                  std::span<const Tensor> actions,
                                                  bool sample_mode,
                                                  std::span<const Tensor> noises,
                                                  std::span<const int> decode_mods) const {
  Tape& t = *b.tape;
  check_arg(!actions.empty(), "predict_open_loop: horizon must be >= 1");
  if (sample_mode) {
    check_arg(noises.size() == actions.size(),
              "predict_open_loop: sampled rollout needs one noise per step");
  }
  std::vector<PredictStep> out;
  out.reserve(actions.size());
  Var h = from.h;
  Var s = from.s;
  for (std::size_t j = 0; j < actions.size(); ++j) {
    h = deterministic_step(b, h, s, t.constant(actions[j]));
    const DiagGaussian prior = prior_head(b, h);
    s = sample_mode ? rsample(t, prior, noises[j]) : prior.mean;
    PredictStep step;
    step.prior = prior;
    for (int mod : decode_mods) {
      step.decoded_means.emplace(cfg_.modalities[static_cast<std::size_t>(mod)].name,
                                 decode(b, mod, h, s).mean);
    }
    out.push_back(std::move(step));
  }
  return out;
}

}  // namespace mrssm
