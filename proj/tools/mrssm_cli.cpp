// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset generation, training, evaluation, single
// anchor prediction, leave-one-out runs, and the property self-test.
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure, 3 selftest
// failure.
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mrssm/checkpoint.hpp"
#include "mrssm/config.hpp"
#include "mrssm/dataset_io.hpp"
#include "mrssm/eval.hpp"
#include "mrssm/kernels/kernels.hpp"
#include "mrssm/selftest.hpp"
#include "mrssm/simulator.hpp"
#include "mrssm/training.hpp"
#include "mrssm/util.hpp"

namespace fs = std::filesystem;
using namespace mrssm;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file (flat dotted keys)");
  cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set train.epochs=10")
      ->take_all();
}

RunConfig load_config(const CommonOpts& opts) {
  RunConfig cfg = RunConfig::load(opts.config_path, opts.overrides);
  cfg.apply_kernel_backend();
  return cfg;
}

Dataset generate_dataset(const RunConfig& cfg, bool verbose) {
  const SimParams sp = cfg.sim_params();
  const std::uint64_t seed = cfg.seed();
  Rng map_rng(seed, "map");
  const TerrainMap map = make_terrain_map(sp, map_rng);

  Dataset ds;
  ds.modalities = sim_modalities(sp);
  ds.dt = sp.dt;
  ds.n_train = cfg.get_int("data.n_train");
  ds.n_val = cfg.get_int("data.n_val");
  const int steps = cfg.get_int("data.steps");
  ds.trajs.resize(static_cast<std::size_t>(ds.n_train + ds.n_val));
  parallel_for(ds.n_train + ds.n_val, [&](int i) {
    ds.trajs[static_cast<std::size_t>(i)] =
        gen_trajectory(map, sp, steps, Rng(seed, "data", static_cast<std::uint64_t>(i)));
  });
  if (verbose) {
    std::cout << "generated " << ds.trajs.size() << " trajectories of up to " << steps
              << " steps" << std::endl;
  }
  return ds;
}

Mrssm build_model(const RunConfig& cfg, const Dataset& ds) {
  ModelConfig mc = cfg.model_config();
  // dataset meta is authoritative for observation shapes
  mc.modalities = ds.modalities;
  for (ModalitySpec& m : mc.modalities) {
    m.lambda = static_cast<float>(cfg.get_double("mod." + m.name + ".lambda"));
  }
  mc.validate();
  Mrssm model(mc);
  Rng init_rng(cfg.seed(), "init");
  model.init_params(init_rng);
  return model;
}

int cmd_gen_data(const CommonOpts& opts, const std::string& out_dir) {
  const RunConfig cfg = load_config(opts);
  const Dataset ds = generate_dataset(cfg, true);
  write_dataset(out_dir, ds);
  cfg.write((fs::path(out_dir) / "config.json").string());
  std::cout << "wrote dataset to " << out_dir << std::endl;
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data_dir, const std::string& out_dir) {
  const RunConfig cfg = load_config(opts);
  const Dataset ds = read_dataset(data_dir);
  fs::create_directories(out_dir);
  Mrssm model = build_model(cfg, ds);

  TrainingConfig tc = cfg.training_config();
  tc.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  tc.verbose = true;
  train_run(ds, model, tc);

  save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), model);
  cfg.write((fs::path(out_dir) / "config.json").string());
  std::cout << "wrote checkpoint and metrics to " << out_dir << std::endl;
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt, const std::string& data_dir,
             const std::string& out_dir) {
  const RunConfig cfg = load_config(opts);
  const Dataset ds = read_dataset(data_dir);
  const Mrssm model = load_checkpoint(ckpt);
  fs::create_directories(out_dir);

  const EvalConfig ec = cfg.eval_config();
  MrssmPredictor predictor(model, ec.context);
  const EvalReport report = ablation_eval(predictor, ds, ec, model.config().fusion);
  write_report_csv((fs::path(out_dir) / "results.csv").string(), report);
  write_report_json((fs::path(out_dir) / "results.json").string(), report);
  cfg.write((fs::path(out_dir) / "config.json").string());
  std::cout << "wrote results to " << out_dir << std::endl;
  return 0;
}

int cmd_predict(const CommonOpts& opts, const std::string& ckpt, const std::string& data_dir,
                int traj_idx, int t, int horizon) {
  const RunConfig cfg = load_config(opts);
  const Dataset ds = read_dataset(data_dir);
  const Mrssm model = load_checkpoint(ckpt);
  check_arg(traj_idx >= 0 && traj_idx < static_cast<int>(ds.trajs.size()),
            "predict: trajectory index out of range");
  const Trajectory& traj = ds.trajs[static_cast<std::size_t>(traj_idx)];
  const EvalConfig ec = cfg.eval_config();
  check_arg(t + 1 >= ec.context && t + horizon < traj.length(),
            "predict: anchor t must satisfy context <= t+1 and t+horizon < length");

  MrssmPredictor predictor(model, ec.context);
  std::vector<int> all_mods(model.config().modalities.size());
  for (std::size_t i = 0; i < all_mods.size(); ++i) all_mods[i] = static_cast<int>(i);
  const auto pred = predictor.predict(traj, all_mods, t, horizon);

  std::vector<double> pv, pw, gv, gw;
  std::vector<Action> cmd;
  std::cout << "step  v_pred   v_true   w_pred   w_true\n";
  for (int j = 0; j < horizon; ++j) {
    const RobotState& s = traj.states[static_cast<std::size_t>(t + j + 1)];
    pv.push_back(pred[static_cast<std::size_t>(j)].first);
    pw.push_back(pred[static_cast<std::size_t>(j)].second);
    gv.push_back(s.v);
    gw.push_back(s.omega);
    cmd.push_back(traj.actions[static_cast<std::size_t>(t + j + 1)]);
    std::printf("%4d  %+.4f  %+.4f  %+.4f  %+.4f\n", j + 1, pv.back(), gv.back(), pw.back(),
                gw.back());
  }
  const Pose pp = integrate_pose(pv, pw, ds.dt);
  const Pose gp = integrate_pose(gv, gw, ds.dt);
  const Pose cp = control_baseline(cmd, ds.dt);
  std::printf("predicted final pose: (%.4f, %.4f, %.4f)\n", pp.x, pp.y, pp.theta);
  std::printf("true final pose:      (%.4f, %.4f, %.4f)\n", gp.x, gp.y, gp.theta);
  std::printf("translation error:    %.4f m\n", final_pose_error(pp, gp));
  std::printf("control baseline:     %.4f m\n", final_pose_error(cp, gp));
  return 0;
}

int cmd_loo(const CommonOpts& opts, const std::string& data_dir, const std::string& out_dir) {
  // Leave-one-out: for each trajectory, train on the rest and evaluate on it.
  // Intended for small datasets; cost scales with the trajectory count.
  const RunConfig cfg = load_config(opts);
  const Dataset full = read_dataset(data_dir);
  fs::create_directories(out_dir);
  const int n = static_cast<int>(full.trajs.size());
  check_arg(n >= 2, "loo: need at least 2 trajectories");

  // (subset, horizon, group) -> medians across folds
  std::map<std::string, std::vector<double>> medians;
  for (int fold = 0; fold < n; ++fold) {
    Dataset ds;
    ds.modalities = full.modalities;
    ds.dt = full.dt;
    ds.n_train = n - 1;
    ds.n_val = 1;
    for (int i = 0; i < n; ++i) {
      if (i != fold) ds.trajs.push_back(full.trajs[static_cast<std::size_t>(i)]);
    }
    ds.trajs.push_back(full.trajs[static_cast<std::size_t>(fold)]);

    Mrssm model = build_model(cfg, ds);
    TrainingConfig tc = cfg.training_config();
    tc.verbose = false;
    train_run(ds, model, tc);

    const EvalConfig ec = cfg.eval_config();
    MrssmPredictor predictor(model, ec.context);
    const EvalReport report = ablation_eval(predictor, ds, ec, model.config().fusion);
    write_report_csv((fs::path(out_dir) / ("results_fold_" + std::to_string(fold) + ".csv")).string(),
                     report);
    auto record = [&](const AblationRow& row) {
      const struct {
        const char* g;
        const ErrorStats* st;
      } groups[] = {{"all", &row.stats.all},
                    {"transition", &row.stats.transition},
                    {"non_transition", &row.stats.non_transition}};
      for (const auto& gr : groups) {
        if (gr.st->n > 0) {
          medians[row.subset_name + "," + std::to_string(row.horizon * full.dt) + "," + gr.g]
              .push_back(gr.st->median);
        }
      }
    };
    for (const AblationRow& row : report.control_rows) record(row);
    for (const AblationRow& row : report.rows) record(row);
    std::cout << "fold " << fold + 1 << "/" << n << " done" << std::endl;
  }

  std::ofstream out(fs::path(out_dir) / "loo_summary.csv");
  out << "ablation_subset,horizon_s,group,mean_median_m,folds\n";
  for (const auto& [key, vals] : medians) {
    double acc = 0;
    for (double v : vals) acc += v;
    out << key << "," << acc / static_cast<double>(vals.size()) << "," << vals.size() << "\n";
  }
  cfg.write((fs::path(out_dir) / "config.json").string());
  std::cout << "wrote leave-one-out summary to " << out_dir << std::endl;
  return 0;
}

int cmd_selftest(const CommonOpts& opts) {
  const RunConfig cfg = load_config(opts);
  const auto results = run_property_suite(cfg.seed());
  for (const CheckResult& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")"
              << std::endl;
  }
  if (!all_passed(results)) {
    std::cout << "selftest: FAILURES present" << std::endl;
    return 3;
  }
  std::cout << "selftest: all checks passed" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal recurrent state-space model: data generation, training, evaluation"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, pred_opts, loo_opts, self_opts;
  std::string gen_out, train_data, train_out, eval_ckpt, eval_data, eval_out;
  std::string pred_ckpt, pred_data, loo_data, loo_out;
  std::string train_elbo;
  int pred_traj = 0, pred_t = 30, pred_h = 10;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a terrain-simulator dataset");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  add_common(train, train_opts);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--elbo", train_elbo, "objective: mvae|new|concat (overrides train.elbo)");

  CLI::App* ev = app.add_subcommand("eval", "ablation evaluation of a checkpoint");
  add_common(ev, eval_opts);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--out", eval_out, "output directory")->required();

  CLI::App* pred = app.add_subcommand("predict", "print one anchor prediction");
  add_common(pred, pred_opts);
  pred->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
  pred->add_option("--data", pred_data, "dataset directory")->required();
  pred->add_option("--traj", pred_traj, "trajectory index");
  pred->add_option("--t", pred_t, "anchor timestep (array index)");
  pred->add_option("--horizon", pred_h, "prediction horizon in steps");

  CLI::App* loo = app.add_subcommand("loo", "leave-one-out train/eval over all trajectories");
  add_common(loo, loo_opts);
  loo->add_option("--data", loo_data, "dataset directory")->required();
  loo->add_option("--out", loo_out, "output directory")->required();

  CLI::App* self = app.add_subcommand("selftest", "run the property suite");
  add_common(self, self_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts, gen_out);
    if (train->parsed()) {
      if (!train_elbo.empty()) {
        train_opts.overrides.push_back("train.elbo=\"" + train_elbo + "\"");
      }
      return cmd_train(train_opts, train_data, train_out);
    }
    if (ev->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_data, eval_out);
    if (pred->parsed()) return cmd_predict(pred_opts, pred_ckpt, pred_data, pred_traj, pred_t, pred_h);
    if (loo->parsed()) return cmd_loo(loo_opts, loo_data, loo_out);
    if (self->parsed()) return cmd_selftest(self_opts);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
