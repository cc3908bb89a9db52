// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "mrssm/util.hpp"

namespace mrssm {

namespace {

// batch mean of a rank-1 (B) vector
Var batch_mean(Tape& t, Var v) {
  return t.scale(t.sum(v), 1.0f / static_cast<float>(t.value(v).dim(0)));
}

double tensor_mse(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (int i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / a.numel();
}

ObsVars mask_to_subset(const ObsVars& obs, std::span<const int> subset) {
  ObsVars out(obs.size());
  for (int m : subset) {
    out[static_cast<std::size_t>(m)] = obs[static_cast<std::size_t>(m)];
  }
  return out;
}

}  // namespace

const char* elbo_variant_name(ElboVariant v) {
  switch (v) {
    case ElboVariant::kMvae: return "mvae";
    case ElboVariant::kNew: return "new";
    case ElboVariant::kConcat: return "concat";
  }
  return "?";
}

ElboVariant elbo_variant_from_name(const std::string& name) {
  if (name == "mvae") return ElboVariant::kMvae;
  if (name == "new") return ElboVariant::kNew;
  if (name == "concat") return ElboVariant::kConcat;
  throw std::invalid_argument("unknown elbo variant '" + name + "' (mvae|new|concat)");
}

void TrainingConfig::validate() const {
  check_arg(beta >= 0, "TrainingConfig: beta must be >= 0");
  check_arg(seq_len >= 2, "TrainingConfig: seq_len must be >= 2");
  check_arg(subsets_per_batch >= 1, "TrainingConfig: subsets_per_batch must be >= 1");
  check_arg(batch_size >= 1 && epochs >= 1 && lr > 0 && grad_clip > 0,
            "TrainingConfig: bad optimizer settings");
}

SubsetSchedule sample_subsets(int n_modalities, int k, Rng& rng) {
  check_arg(n_modalities >= 1, "sample_subsets: empty modality list");
  check_arg(k >= 0, "sample_subsets: k must be >= 0");
  SubsetSchedule out;
  std::vector<int> full(static_cast<std::size_t>(n_modalities));
  std::iota(full.begin(), full.end(), 0);
  out.subsets.push_back(full);
  for (int i = 0; i < n_modalities; ++i) out.subsets.push_back({i});
  // nonempty proper subsets exist only for n >= 2
  if (n_modalities >= 2) {
    const int n_proper = (1 << n_modalities) - 2;
    for (int draw = 0; draw < k; ++draw) {
      const int bits = rng.uniform_int(1, n_proper);  // in [1, 2^n - 2]
      std::vector<int> subset;
      for (int m = 0; m < n_modalities; ++m) {
        if (bits & (1 << m)) subset.push_back(m);
      }
      out.subsets.push_back(std::move(subset));
    }
  }
  return out;
}

Batch assemble_batch(const Dataset& ds, std::span<const ModalitySpec> mods,
                     std::span<const int> traj_idx, std::span<const int> starts, int T) {
  check_arg(traj_idx.size() == starts.size() && !traj_idx.empty(),
            "assemble_batch: index/start size mismatch");
  const int B = static_cast<int>(traj_idx.size());
  Batch batch;
  batch.B = B;
  batch.T = T;
  const int n_mods = static_cast<int>(mods.size());

  for (int t = 0; t < T; ++t) {
    Tensor actions({B, 2});
    for (int b = 0; b < B; ++b) {
      const Trajectory& traj = ds.trajs[static_cast<std::size_t>(traj_idx[b])];
      const int tt = starts[b] + t;
      check_arg(tt < traj.length(), "assemble_batch: window exceeds trajectory length");
      actions[b * 2 + 0] = traj.actions[static_cast<std::size_t>(tt)].v_target;
      actions[b * 2 + 1] = traj.actions[static_cast<std::size_t>(tt)].omega_target;
    }
    batch.actions.push_back(std::move(actions));

    std::vector<std::optional<Tensor>> obs_t(static_cast<std::size_t>(n_mods));
    for (int m = 0; m < n_mods; ++m) {
      const ModalitySpec& spec = mods[static_cast<std::size_t>(m)];
      bool all_present = true;
      for (int b = 0; b < B; ++b) {
        const Trajectory& traj = ds.trajs[static_cast<std::size_t>(traj_idx[b])];
        if (!traj.mask.at(spec.name)[static_cast<std::size_t>(starts[b] + t)]) {
          all_present = false;
          break;
        }
      }
      if (!all_present) continue;
      std::vector<int> shape{B};
      shape.insert(shape.end(), spec.shape.begin(), spec.shape.end());
      Tensor value(shape);
      const int n = spec.numel();
      for (int b = 0; b < B; ++b) {
        const Trajectory& traj = ds.trajs[static_cast<std::size_t>(traj_idx[b])];
        const float* src =
            traj.obs.at(spec.name).data() + static_cast<std::size_t>(starts[b] + t) * n;
        std::copy(src, src + n, value.data() + static_cast<std::size_t>(b) * n);
      }
      obs_t[static_cast<std::size_t>(m)] = std::move(value);
    }
    batch.obs.push_back(std::move(obs_t));
  }
  return batch;
}

BoundBatch leaf_batch(Tape& tape, const Batch& batch) {
  BoundBatch bb;
  for (int t = 0; t < batch.T; ++t) {
    bb.actions.push_back(tape.constant(batch.actions[static_cast<std::size_t>(t)]));
    ObsVars obs_t;
    for (const auto& o : batch.obs[static_cast<std::size_t>(t)]) {
      if (o.has_value()) {
        obs_t.emplace_back(tape.constant(*o));
      } else {
        obs_t.emplace_back(std::nullopt);
      }
    }
    bb.obs.push_back(std::move(obs_t));
  }
  return bb;
}

RolloutResult run_rollout(const Mrssm& model, const Mrssm::Bound& bound, const BoundBatch& bb,
                          std::span<const int> subset, std::span<const Tensor> noises,
                          const Tensor& s0) {
  const int T = static_cast<int>(bb.actions.size());
  check_arg(static_cast<int>(noises.size()) == T, "run_rollout: need one noise per step");
  RolloutResult out;
  out.states.reserve(static_cast<std::size_t>(T));
  LatentState prev = model.initial_state(bound, s0.dim(0), s0);
  for (int t = 0; t < T; ++t) {
    const ObsVars masked = mask_to_subset(bb.obs[static_cast<std::size_t>(t)], subset);
    prev = model.filter_step(bound, prev, bb.actions[static_cast<std::size_t>(t)], masked,
                             noises[static_cast<std::size_t>(t)]);
    out.states.push_back(prev);
  }
  return out;
}

namespace {

// Shared ELBO assembly. recon_mods: which modalities enter the reconstruction
// sum; kl_q: per-step posterior for the KL (cached full-set posterior for the
// new objective, the rollout's own posterior otherwise).
ElboResult elbo_common(const Mrssm& model, const Mrssm::Bound& bound, const BoundBatch& bb,
                       std::span<const int> recon_mods, const RolloutResult& rollout,
                       std::span<const DiagGaussian> kl_q, double beta) {
  Tape& t = *bound.tape;
  const int T = static_cast<int>(bb.actions.size());
  check_arg(static_cast<int>(rollout.states.size()) == T, "elbo: rollout length mismatch");
  check_arg(static_cast<int>(kl_q.size()) == T, "elbo: posterior cache length mismatch");

  ElboResult res;
  std::map<std::string, double> mse_acc;
  std::map<std::string, int> mse_n;
  Var loss;
  bool have_loss = false;
  for (int step = 0; step < T; ++step) {
    const LatentState& st = rollout.states[static_cast<std::size_t>(step)];
    const Var kl_t =
        batch_mean(t, kl_divergence(t, kl_q[static_cast<std::size_t>(step)], st.prior));
    res.kl += static_cast<double>(t.value(kl_t)[0]);
    res.kl_per_step.push_back(t.value(kl_t)[0]);
    Var step_loss = t.scale(kl_t, static_cast<float>(beta));
    for (int m : recon_mods) {
      const auto& obs = bb.obs[static_cast<std::size_t>(step)][static_cast<std::size_t>(m)];
      if (!obs.has_value()) continue;  // absent in the data itself
      const ModalitySpec& spec = model.config().modalities[static_cast<std::size_t>(m)];
      const DiagGaussian dec = model.decode(bound, m, st.h, st.s);
      const Var lp = batch_mean(t, log_prob(t, dec, *obs));
      step_loss = t.sub(step_loss, t.scale(lp, spec.lambda));
      mse_acc[spec.name] += tensor_mse(t.value(dec.mean), t.value(*obs));
      mse_n[spec.name] += 1;
    }
    loss = have_loss ? t.add(loss, step_loss) : step_loss;
    have_loss = true;
  }
  res.loss = loss;
  for (const auto& [name, acc] : mse_acc) res.recon_mse[name] = acc / mse_n[name];
  return res;
}

std::vector<DiagGaussian> own_posteriors(const RolloutResult& r) {
  std::vector<DiagGaussian> out;
  out.reserve(r.states.size());
  for (const LatentState& s : r.states) out.push_back(s.posterior);
  return out;
}

}  // namespace

ElboResult elbo_mvae(const Mrssm& model, const Mrssm::Bound& bound, const BoundBatch& bb,
                     std::span<const int> subset, const RolloutResult& rollout, double beta) {
  const auto posts = own_posteriors(rollout);
  return elbo_common(model, bound, bb, subset, rollout, posts, beta);
}

ElboResult elbo_new(const Mrssm& model, const Mrssm::Bound& bound, const BoundBatch& bb,
                    std::span<const int> subset, const RolloutResult& subset_rollout,
                    std::span<const DiagGaussian> cached_fullset_posteriors, double beta) {
  (void)subset;  // reconstruction always covers every present modality
  check_arg(!cached_fullset_posteriors.empty() &&
                cached_fullset_posteriors.size() == subset_rollout.states.size(),
            "elbo_new: missing or mismatched full-set posterior cache");
  std::vector<int> all_mods(static_cast<std::size_t>(model.config().n_modalities()));
  std::iota(all_mods.begin(), all_mods.end(), 0);
  return elbo_common(model, bound, bb, all_mods, subset_rollout, cached_fullset_posteriors, beta);
}

void AdamOptimizer::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  t_ += 1;
  double norm2 = 0;
  for (const auto& [name, g] : grads) {
    for (int i = 0; i < g.numel(); ++i) norm2 += static_cast<double>(g[i]) * g[i];
  }
  const double norm = std::sqrt(norm2);
  const double clip_scale = norm > clip_ ? clip_ / norm : 1.0;
  const double bc1 = 1.0 - std::pow(kB1, t_);
  const double bc2 = 1.0 - std::pow(kB2, t_);

  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    check_arg(p.numel() == g.numel(), "AdamOptimizer: grad shape mismatch for " + name);
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor(p.shape())).first;
      v_.emplace(name, Tensor(p.shape()));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    for (int i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g[i]) * clip_scale;
      const double mi = kB1 * m[i] + (1.0 - kB1) * gi;
      const double vi = kB2 * v[i] + (1.0 - kB2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] -= static_cast<float>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + kEps));
    }
  }
}

TrainResult train_run(const Dataset& ds, Mrssm& model, const TrainingConfig& cfg) {
  cfg.validate();
  check_arg(ds.n_train > 0, "train_run: dataset has no training trajectories");
  const int n_mods = model.config().n_modalities();
  const auto& mods = model.config().modalities;

  std::ofstream metrics_out;
  if (!cfg.metrics_path.empty()) {
    metrics_out.open(cfg.metrics_path);
    check_arg(metrics_out.good(), "train_run: cannot open metrics file " + cfg.metrics_path);
  }

  AdamOptimizer opt(cfg.lr, cfg.grad_clip);
  TrainResult result;
  std::vector<int> all_mods(static_cast<std::size_t>(n_mods));
  std::iota(all_mods.begin(), all_mods.end(), 0);

  const int B = std::min(cfg.batch_size, ds.n_train);
  const int batches_per_epoch = std::max(1, ds.n_train / B);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng order_rng(cfg.seed, "data-order", static_cast<std::uint64_t>(epoch));
    std::vector<int> order(static_cast<std::size_t>(ds.n_train));
    std::iota(order.begin(), order.end(), 0);
    for (int i = ds.n_train - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(order_rng.uniform_int(0, i))]);
    }

    EpochMetrics em;
    em.epoch = epoch;
    int steps = 0;
    for (int bi = 0; bi < batches_per_epoch; ++bi) {
      const std::uint64_t tick = static_cast<std::uint64_t>(epoch) * 100000 + bi;
      std::vector<int> traj_idx(order.begin() + bi * B, order.begin() + (bi + 1) * B);
      int T = cfg.seq_len;
      for (int b = 0; b < B; ++b) {
        T = std::min(T, ds.trajs[static_cast<std::size_t>(traj_idx[static_cast<std::size_t>(b)])].length());
      }
      std::vector<int> starts(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        const int len = ds.trajs[static_cast<std::size_t>(traj_idx[static_cast<std::size_t>(b)])].length();
        starts[static_cast<std::size_t>(b)] = order_rng.uniform_int(0, len - T);
      }
      const Batch batch = assemble_batch(ds, mods, traj_idx, starts, T);

      Rng noise_rng(cfg.seed, "noise", tick);
      const Tensor s0 = noise_rng.normal_tensor({B, model.config().d_s});
      std::vector<Tensor> noises;
      for (int t = 0; t < T; ++t) noises.push_back(noise_rng.normal_tensor({B, model.config().d_s}));

      Tape tape;
      const Mrssm::Bound bound = model.bind(tape, true);
      const BoundBatch bb = leaf_batch(tape, batch);

      const RolloutResult full_rollout = run_rollout(model, bound, bb, all_mods, noises, s0);
      ElboResult full_elbo = elbo_mvae(model, bound, bb, all_mods, full_rollout, cfg.beta);
      Var total_loss = full_elbo.loss;

      if (cfg.elbo != ElboVariant::kConcat) {
        Rng subset_rng(cfg.seed, "subsets", tick);
        SubsetSchedule schedule = sample_subsets(n_mods, cfg.subsets_per_batch, subset_rng);
        const auto cached = own_posteriors(full_rollout);
        for (std::size_t si = 1; si < schedule.subsets.size(); ++si) {
          const auto& subset = schedule.subsets[si];
          const RolloutResult sub_rollout = run_rollout(model, bound, bb, subset, noises, s0);
          const ElboResult sub_elbo =
              cfg.elbo == ElboVariant::kNew
                  ? elbo_new(model, bound, bb, subset, sub_rollout, cached, cfg.beta)
                  : elbo_mvae(model, bound, bb, subset, sub_rollout, cfg.beta);
          total_loss = tape.add(total_loss, sub_elbo.loss);
        }
      }

      const double loss_val = static_cast<double>(tape.value(total_loss)[0]);
      if (!std::isfinite(loss_val)) {
        const int bad = tape.first_nonfinite_node();
        std::string name = bad >= 0 ? tape.op_name(bad) : "<unknown>";
        for (const auto& [pname, pvar] : bound.p) {
          if (pvar.idx == bad) {
            name = "param '" + pname + "'";
            break;
          }
        }
        throw std::runtime_error("train_run: non-finite loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(bi) +
                                 "; first non-finite tensor: " + name + " (node " +
                                 std::to_string(bad) + ")");
      }

      tape.backward(total_loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, var] : bound.p) grads.emplace(name, tape.grad(var));
      opt.step(model.params(), grads);

      em.loss += loss_val;
      em.kl += full_elbo.kl;
      for (const auto& [name, v] : full_elbo.recon_mse) em.recon[name] += v;
      ++steps;
    }

    em.loss /= steps;
    em.kl /= steps;
    for (auto& [name, v] : em.recon) v /= steps;
    if (metrics_out.is_open()) {
      nlohmann::json j{{"epoch", em.epoch}, {"loss", em.loss}, {"kl", em.kl}};
      for (const auto& [name, v] : em.recon) j["recon_" + name] = v;
      metrics_out << j.dump() << "\n";
      metrics_out.flush();
    }
    if (cfg.verbose) {
      std::cout << "[train " << elbo_variant_name(cfg.elbo) << "] epoch " << em.epoch << "/"
                << cfg.epochs << " loss " << em.loss << " kl " << em.kl << std::endl;
    }
    result.metrics.push_back(std::move(em));
  }
  return result;
}

}  // namespace mrssm
