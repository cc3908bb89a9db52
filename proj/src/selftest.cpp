// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/selftest.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "mrssm/checkpoint.hpp"
#include "mrssm/distributions.hpp"
#include "mrssm/eval.hpp"
#include "mrssm/grad_check.hpp"
#include "mrssm/model.hpp"
#include "mrssm/rng.hpp"
#include "mrssm/simulator.hpp"
#include "mrssm/training.hpp"

namespace mrssm {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Miniature model shared by the gradient and identity checks.
ModelConfig mini_config() {
  ModelConfig cfg;
  cfg.d_h = 8;
  cfg.d_s = 4;
  cfg.d_a = 2;
  cfg.d_embed = 16;
  cfg.conv_channels = {4, 8, 8};
  cfg.modalities = {
      {"vel", ModalityKind::kDense, {3}, 1.0f},
      {"cam", ModalityKind::kImage, {3, 8, 8}, 0.2f},
  };
  return cfg;
}

Batch synthetic_batch(const ModelConfig& cfg, int batch, int steps, Rng& rng) {
  Batch b;
  b.B = batch;
  b.T = steps;
  for (int t = 0; t < steps; ++t) {
    b.actions.push_back(rng.normal_tensor({batch, cfg.d_a}, 0.0, 0.5));
    std::vector<std::optional<Tensor>> obs;
    for (const ModalitySpec& m : cfg.modalities) {
      std::vector<int> shape{batch};
      shape.insert(shape.end(), m.shape.begin(), m.shape.end());
      obs.emplace_back(rng.normal_tensor(shape, 0.0, 0.5));
    }
    b.obs.push_back(std::move(obs));
  }
  return b;
}

CheckResult check_poe_oracle(std::uint64_t seed) {
  // fused mean/stddev of random 1-D products vs grid integration, 1e-6
  Rng rng(seed, "selftest-poe");
  double worst = 0;
  for (int rep = 0; rep < 30; ++rep) {
    const int k = rng.uniform_int(2, 4);
    std::vector<double> means, stds;
    Tape t;
    std::vector<DiagGaussian> gs;
    for (int i = 0; i < k; ++i) {
      means.push_back(rng.uniform(-2, 2));
      stds.push_back(rng.uniform(0.3, 3.0));
      gs.push_back(DiagGaussian{
          t.constant(Tensor({1, 1}, {static_cast<float>(means.back())})),
          t.constant(Tensor({1, 1}, {static_cast<float>(stds.back())}))});
    }
    const DiagGaussian f = poe_fuse(t, gs);

    // trapezoidal integration of the density product
    double lo = 1e300, hi = -1e300, min_std = 1e300;
    for (int i = 0; i < k; ++i) {
      lo = std::min(lo, means[static_cast<std::size_t>(i)] - 14 * stds[static_cast<std::size_t>(i)]);
      hi = std::max(hi, means[static_cast<std::size_t>(i)] + 14 * stds[static_cast<std::size_t>(i)]);
      min_std = std::min(min_std, stds[static_cast<std::size_t>(i)]);
    }
    const double h = min_std / 64;
    double z0 = 0, z1 = 0, z2 = 0;
    double log_shift = -1e300;
    const int n = static_cast<int>((hi - lo) / h) + 1;
    std::vector<double> lps(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double x = lo + i * h;
      double lp = 0;
      for (int j = 0; j < k; ++j) {
        const double z = (x - means[static_cast<std::size_t>(j)]) / stds[static_cast<std::size_t>(j)];
        lp += -0.5 * z * z - std::log(stds[static_cast<std::size_t>(j)]);
      }
      lps[static_cast<std::size_t>(i)] = lp;
      log_shift = std::max(log_shift, lp);
    }
    for (int i = 0; i < n; ++i) {
      const double x = lo + i * h;
      const double p = std::exp(lps[static_cast<std::size_t>(i)] - log_shift);
      z0 += p;
      z1 += p * x;
      z2 += p * x * x;
    }
    const double om = z1 / z0;
    const double os = std::sqrt(z2 / z0 - om * om);
    worst = std::max(worst, std::abs(t.value(f.mean)[0] - om));
    worst = std::max(worst, std::abs(t.value(f.stddev)[0] - os));
  }
  return {"poe-closed-form-vs-grid-integration", worst < 1e-6,
          "max |closed - integrated| = " + fmt(worst) + " (limit 1e-6)"};
}

CheckResult check_kl_monte_carlo(std::uint64_t seed) {
  Rng rng(seed, "selftest-kl");
  bool ok = true;
  double worst_ratio = 0;
  for (int rep = 0; rep < 50 && ok; ++rep) {
    const double mq = rng.uniform(-2, 2), sq = rng.uniform(0.3, 2.5);
    const double mp = rng.uniform(-2, 2), sp = rng.uniform(0.3, 2.5);
    Tape t;
    const DiagGaussian q{t.constant(Tensor({1, 1}, {static_cast<float>(mq)})),
                         t.constant(Tensor({1, 1}, {static_cast<float>(sq)}))};
    const DiagGaussian p{t.constant(Tensor({1, 1}, {static_cast<float>(mp)})),
                         t.constant(Tensor({1, 1}, {static_cast<float>(sp)}))};
    const double closed = t.value(kl_divergence(t, q, p))[0];
    const int n = 1000000;
    double acc = 0, acc2 = 0;
    for (int i = 0; i < n; ++i) {
      const double z = rng.normal(mq, sq);
      const double lq = -0.5 * ((z - mq) / sq) * ((z - mq) / sq) - std::log(sq);
      const double lp = -0.5 * ((z - mp) / sp) * ((z - mp) / sp) - std::log(sp);
      acc += lq - lp;
      acc2 += (lq - lp) * (lq - lp);
    }
    const double mc = acc / n;
    const double se = std::sqrt(std::max(acc2 / n - mc * mc, 0.0) / n);
    const double lim = std::max(0.01 * std::abs(closed), 3.0 * se);
    const double err = std::abs(closed - mc);
    worst_ratio = std::max(worst_ratio, err / std::max(lim, 1e-300));
    ok = ok && err <= lim;
  }
  return {"kl-closed-form-vs-monte-carlo", ok,
          "50 random pairs, 1e6 samples; worst err/limit = " + fmt(worst_ratio)};
}

CheckResult check_gradients(std::uint64_t seed) {
  Rng init_rng(seed, "selftest-grad-init");
  Mrssm model(mini_config());
  model.init_params(init_rng);

  Rng data_rng(seed, "selftest-grad-data");
  const int T = 3, B = 1;
  const Batch batch = synthetic_batch(model.config(), B, T, data_rng);
  const Tensor s0 = data_rng.normal_tensor({B, model.config().d_s});
  std::vector<Tensor> noises;
  for (int t = 0; t < T; ++t) noises.push_back(data_rng.normal_tensor({B, model.config().d_s}));

  std::vector<std::string> names;
  std::vector<Tensor> point;
  for (const auto& [n, t] : model.params().all()) {
    names.push_back(n);
    point.push_back(t);
  }

  GraphFn fn = [&](Tape& tape, std::span<const Var> leaves) {
    Mrssm::Bound bound;
    bound.tape = &tape;
    for (std::size_t i = 0; i < names.size(); ++i) bound.p.emplace(names[i], leaves[i]);
    const BoundBatch bb = leaf_batch(tape, batch);
    const std::vector<int> full = {0, 1};
    const std::vector<int> sub = {1};
    const RolloutResult full_ro = run_rollout(model, bound, bb, full, noises, s0);
    const auto cached = [&] {
      std::vector<DiagGaussian> posts;
      for (const auto& st : full_ro.states) posts.push_back(st.posterior);
      return posts;
    }();
    const ElboResult full_elbo = elbo_mvae(model, bound, bb, full, full_ro, 1.0);
    const RolloutResult sub_ro = run_rollout(model, bound, bb, sub, noises, s0);
    const ElboResult sub_elbo = elbo_new(model, bound, bb, sub, sub_ro, cached, 1.0);
    return tape.add(full_elbo.loss, sub_elbo.loss);
  };

  const double err = grad_check(fn, point, 1e-3);
  return {"gradient-check-miniature-model", err < 1e-3,
          std::to_string(model.params().total_parameters()) +
              " parameters; max relative error = " + fmt(err) + " (limit 1e-3)"};
}

CheckResult check_fullset_equivalence(std::uint64_t seed) {
  Rng init_rng(seed, "selftest-eq-init");
  Mrssm model(mini_config());
  model.init_params(init_rng);
  Rng data_rng(seed, "selftest-eq-data");
  const int T = 6, B = 3;
  const Batch batch = synthetic_batch(model.config(), B, T, data_rng);
  const Tensor s0 = data_rng.normal_tensor({B, model.config().d_s});
  std::vector<Tensor> noises;
  for (int t = 0; t < T; ++t) noises.push_back(data_rng.normal_tensor({B, model.config().d_s}));

  Tape tape;
  const Mrssm::Bound bound = model.bind(tape, false);
  const BoundBatch bb = leaf_batch(tape, batch);
  const std::vector<int> full = {0, 1};
  const RolloutResult ro_a = run_rollout(model, bound, bb, full, noises, s0);
  std::vector<DiagGaussian> cached;
  for (const auto& st : ro_a.states) cached.push_back(st.posterior);
  const ElboResult mvae = elbo_mvae(model, bound, bb, full, ro_a, 1.0);
  // fresh full-set rollout with the same noise draws
  const RolloutResult ro_b = run_rollout(model, bound, bb, full, noises, s0);
  const ElboResult neo = elbo_new(model, bound, bb, full, ro_b, cached, 1.0);
  const double diff =
      std::abs(static_cast<double>(tape.value(mvae.loss)[0]) - tape.value(neo.loss)[0]);
  return {"fullset-elbo-equivalence", diff <= 1e-5,
          "|elbo_new(full) - elbo_mvae(full)| = " + fmt(diff) + " (limit 1e-5)"};
}

CheckResult check_posterior_contraction(std::uint64_t seed) {
  Rng init_rng(seed, "selftest-contract-init");
  Mrssm model(mini_config());
  model.init_params(init_rng);
  Rng rng(seed, "selftest-contract");
  bool ok = true;
  std::string detail = "1000 random filter steps";
  for (int rep = 0; rep < 1000 && ok; ++rep) {
    Tape tape;
    const Mrssm::Bound bound = model.bind(tape, false);
    LatentState prev = model.initial_state(bound, 1, rng.normal_tensor({1, model.config().d_s}));
    const int n_present = rng.uniform_int(0, model.config().n_modalities());
    ObsVars obs(static_cast<std::size_t>(model.config().n_modalities()));
    std::vector<int> order(static_cast<std::size_t>(model.config().n_modalities()));
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < n_present; ++i) {
      const int pick = rng.uniform_int(i, model.config().n_modalities() - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick)]);
      const int m = order[static_cast<std::size_t>(i)];
      std::vector<int> shape{1};
      const auto& mshape = model.config().modalities[static_cast<std::size_t>(m)].shape;
      shape.insert(shape.end(), mshape.begin(), mshape.end());
      obs[static_cast<std::size_t>(m)] = tape.constant(rng.normal_tensor(shape, 0.0, 0.5));
    }
    const LatentState st =
        model.filter_step(bound, prev, tape.constant(rng.normal_tensor({1, 2}, 0.0, 0.5)), obs,
                          rng.normal_tensor({1, model.config().d_s}));
    const Tensor& ps = tape.value(st.prior.stddev);
    const Tensor& qs = tape.value(st.posterior.stddev);
    for (int d = 0; d < ps.numel(); ++d) {
      if (n_present == 0) {
        ok = ok && qs[d] == ps[d];  // empty product: identical object
      } else {
        ok = ok && qs[d] < ps[d];  // precision strictly increases
      }
    }
    if (!ok) detail = "violated at rep " + std::to_string(rep);
  }
  return {"posterior-contraction", ok, detail};
}

CheckResult check_pose_integration(std::uint64_t seed) {
  (void)seed;
  // straight line exactness
  double x = 0, y = 0, th = 0;
  advance_pose(x, y, th, 1.0, 0.0, 1.0);
  const double straight_err = std::abs(x - 1.0) + std::abs(y) + std::abs(th);

  // quarter circle vs 1e6-substep Euler
  double ex = 0, ey = 0, eth = 0;
  const int n = 1000000;
  const double dt = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    ex += std::cos(eth) * 1.0 * dt;
    ey += std::sin(eth) * 1.0 * dt;
    eth += (M_PI / 2) * dt;
  }
  double qx = 0, qy = 0, qth = 0;
  advance_pose(qx, qy, qth, 1.0, M_PI / 2, 1.0);
  const double euler_err = std::hypot(qx - ex, qy - ey);
  const double closed_err = std::hypot(qx - 2.0 / M_PI, qy - 2.0 / M_PI);
  const bool ok = straight_err < 1e-9 && euler_err < 1e-5 && closed_err < 1e-6;
  return {"pose-integration-oracle", ok,
          "straight " + fmt(straight_err) + ", vs-euler " + fmt(euler_err) + ", vs-closed " +
              fmt(closed_err)};
}

CheckResult check_missing_modality_totality(std::uint64_t seed) {
  // a quickly trained checkpoint must filter and predict under all 2^N subsets
  SimParams sp;
  sp.world_m = 40.0;
  sp.blob_seeds = 12;
  Rng map_rng(seed, "selftest-map");
  const TerrainMap map = make_terrain_map(sp, map_rng);

  Dataset ds;
  ds.modalities = sim_modalities(sp);
  ds.dt = sp.dt;
  ds.n_train = 6;
  ds.n_val = 1;
  for (int i = 0; i < ds.n_train + ds.n_val; ++i) {
    ds.trajs.push_back(gen_trajectory(map, sp, 60, Rng(seed, "selftest-traj", static_cast<std::uint64_t>(i))));
  }

  ModelConfig mc;
  mc.d_h = 16;
  mc.d_s = 8;
  mc.d_embed = 16;
  mc.conv_channels = {4, 8, 8};
  mc.modalities = ds.modalities;
  Mrssm model(mc);
  Rng init_rng(seed, "selftest-tot-init");
  model.init_params(init_rng);

  TrainingConfig tc;
  tc.epochs = 2;
  tc.batch_size = 6;
  tc.seq_len = 16;
  tc.seed = seed;
  tc.elbo = ElboVariant::kNew;
  train_run(ds, model, tc);

  const auto ckpt_path =
      (std::filesystem::temp_directory_path() / "mrssm_selftest_ckpt.bin").string();
  save_checkpoint(ckpt_path, model);
  const Mrssm loaded = load_checkpoint(ckpt_path);

  MrssmPredictor predictor(loaded, /*context=*/10);
  const Trajectory& traj = ds.trajs.back();
  const int n_mods = static_cast<int>(ds.modalities.size());
  bool ok = true;
  std::string detail = std::to_string(1 << n_mods) + " subsets filtered and predicted";
  for (int bits = 0; bits < (1 << n_mods) && ok; ++bits) {
    std::vector<int> subset;
    for (int m = 0; m < n_mods; ++m) {
      if (bits & (1 << m)) subset.push_back(m);
    }
    const auto pred = predictor.predict(traj, subset, /*t=*/20, /*horizon=*/10);
    for (const auto& [v, w] : pred) {
      ok = ok && std::isfinite(v) && std::isfinite(w);
    }
    if (!ok) detail = "non-finite prediction for subset bits=" + std::to_string(bits);
  }
  std::filesystem::remove(ckpt_path);
  return {"missing-modality-totality", ok, detail};
}

}  // namespace

std::vector<CheckResult> run_property_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(check_poe_oracle(seed));
  out.push_back(check_kl_monte_carlo(seed));
  out.push_back(check_gradients(seed));
  out.push_back(check_fullset_equivalence(seed));
  out.push_back(check_posterior_contraction(seed));
  out.push_back(check_pose_integration(seed));
  out.push_back(check_missing_modality_totality(seed));
  return out;
}

bool all_passed(std::span<const CheckResult> results) {
  for (const CheckResult& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace mrssm
