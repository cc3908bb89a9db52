// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "mrssm/util.hpp"

namespace mrssm {

namespace {

double quantile_sorted(const std::vector<double>& s, double p) {
  const std::size_t n = s.size();
  if (n == 1) return s[0];
  const double h = p * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = h - static_cast<double>(lo);
  return s[lo] + frac * (s[hi] - s[lo]);
}

// Prepend a batch dimension of 1.
Tensor batch1(const Tensor& t) {
  std::vector<int> shape{1};
  shape.insert(shape.end(), t.shape().begin(), t.shape().end());
  return Tensor(std::move(shape), t.vec());
}

}  // namespace

Pose integrate_pose(std::span<const double> v, std::span<const double> omega, double dt) {
  check_arg(v.size() == omega.size(), "integrate_pose: sequence length mismatch (" +
                                          std::to_string(v.size()) + " vs " +
                                          std::to_string(omega.size()) + ")");
  check_arg(!v.empty(), "integrate_pose: need at least one step");
  Pose p;
  for (std::size_t i = 0; i < v.size(); ++i) {
    advance_pose(p.x, p.y, p.theta, v[i], omega[i], dt);
  }
  return p;
}

double final_pose_error(const Pose& a, const Pose& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

Pose control_baseline(std::span<const Action> actions, double dt) {
  check_arg(!actions.empty(), "control_baseline: need at least one action");
  std::vector<double> v, w;
  v.reserve(actions.size());
  w.reserve(actions.size());
  for (const Action& a : actions) {
    v.push_back(a.v_target);
    w.push_back(a.omega_target);
  }
  return integrate_pose(v, w, dt);
}

ErrorStats ErrorStats::from_samples(std::vector<double> samples) {
  ErrorStats st;
  st.n = static_cast<int>(samples.size());
  if (samples.empty()) {
    st.median = st.q1 = st.q3 = st.rmse = std::numeric_limits<double>::quiet_NaN();
    return st;
  }
  std::sort(samples.begin(), samples.end());
  st.q1 = quantile_sorted(samples, 0.25);
  st.median = quantile_sorted(samples, 0.5);
  st.q3 = quantile_sorted(samples, 0.75);
  double acc = 0;
  for (double s : samples) acc += s * s;
  st.rmse = std::sqrt(acc / static_cast<double>(samples.size()));
  return st;
}

void EvalConfig::validate() const {
  check_arg(context >= 1, "EvalConfig: context must be >= 1");
  check_arg(stride >= 1, "EvalConfig: stride must be >= 1");
  check_arg(!horizons.empty(), "EvalConfig: need at least one horizon");
  for (int h : horizons) check_arg(h >= 1, "EvalConfig: horizons must be >= 1");
}

MrssmPredictor::MrssmPredictor(const Mrssm& model, int context)
    : model_(model), context_(context) {
  lin_idx_ = model.config().modality_index("lin_vel");
  ang_idx_ = model.config().modality_index("ang_vel");
  check_arg(lin_idx_ >= 0 && ang_idx_ >= 0,
            "MrssmPredictor: model must have lin_vel and ang_vel modalities");
}

std::vector<std::pair<double, double>> MrssmPredictor::predict(const Trajectory& traj,
                                                               std::span<const int> subset,
                                                               int t, int horizon) {
  const auto& mods = model_.config().modalities;
  check_arg(t + 1 >= context_ && t + horizon < traj.length(),
            "MrssmPredictor: anchor out of range");
  Tape tape;
  const Mrssm::Bound bound = model_.bind(tape, false);
  const Tensor zero_noise({1, model_.config().d_s});
  LatentState st = model_.initial_state(bound, 1, Tensor({1, model_.config().d_s}));

  std::vector<bool> visible(mods.size(), false);
  for (int m : subset) visible[static_cast<std::size_t>(m)] = true;

  for (int u = t - context_ + 1; u <= t; ++u) {
    const ObservationSet full = traj.observation_at(u, mods);
    ObsVars obs(mods.size());
    for (std::size_t m = 0; m < mods.size(); ++m) {
      if (visible[m] && full.values[m].has_value()) {
        obs[m] = tape.constant(batch1(*full.values[m]));
      }
    }
    Tensor action({1, 2},
                  {traj.actions[static_cast<std::size_t>(u)].v_target,
                   traj.actions[static_cast<std::size_t>(u)].omega_target});
    st = model_.filter_step(bound, st, tape.constant(std::move(action)), obs, zero_noise);
  }

  std::vector<Tensor> future;
  for (int j = 1; j <= horizon; ++j) {
    future.push_back(Tensor({1, 2}, {traj.actions[static_cast<std::size_t>(t + j)].v_target,
                                     traj.actions[static_cast<std::size_t>(t + j)].omega_target}));
  }
  const int decode_mods[] = {lin_idx_, ang_idx_};
  const auto steps = model_.predict_open_loop(bound, st, future, /*sample_mode=*/false, {},
                                              decode_mods);
  std::vector<std::pair<double, double>> out;
  out.reserve(steps.size());
  for (const PredictStep& s : steps) {
    out.emplace_back(tape.value(s.decoded_means.at("lin_vel"))[0],
                     tape.value(s.decoded_means.at("ang_vel"))[0]);
  }
  return out;
}

std::string subset_name(std::span<const std::string> names) {
  if (names.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += "+";
    out += names[i];
  }
  return out;
}

std::pair<ErrorStats, ErrorStats> transition_breakdown(std::span<const double> errors,
                                                       std::span<const std::uint8_t> masks) {
  check_arg(errors.size() == masks.size(), "transition_breakdown: length mismatch");
  std::vector<double> on, off;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    (masks[i] ? on : off).push_back(errors[i]);
  }
  return {ErrorStats::from_samples(std::move(on)), ErrorStats::from_samples(std::move(off))};
}

EvalReport ablation_eval(VelocityPredictor& predictor, const Dataset& ds, const EvalConfig& cfg,
                         FusionMode fusion) {
  cfg.validate();
  check_arg(ds.n_val > 0, "ablation_eval: dataset has no validation trajectories");

  // resolve ablation subsets to modality indices
  std::vector<std::vector<int>> subsets;
  std::vector<std::string> names;
  for (const auto& subset : cfg.ablations) {
    std::vector<int> idx;
    for (const std::string& name : subset) {
      int found = -1;
      for (std::size_t m = 0; m < ds.modalities.size(); ++m) {
        if (ds.modalities[m].name == name) found = static_cast<int>(m);
      }
      check_arg(found >= 0, "ablation_eval: unknown modality '" + name + "'");
      idx.push_back(found);
    }
    if (fusion == FusionMode::kConcat) {
      check_arg(idx.size() == ds.modalities.size(),
                "ablation_eval: concat fusion cannot run with missing modalities (subset '" +
                    subset_name(subset) + "')");
    }
    subsets.push_back(std::move(idx));
    names.push_back(subset_name(subset));
  }

  struct Anchor {
    int traj;  // index into ds.val()
    int t;
    int horizon;
    bool transition;
    double control_err;
  };

  EvalReport report;
  report.dt = ds.dt;
  const auto val = ds.val();

  for (int horizon : cfg.horizons) {
    // enumerate anchors once per horizon (same for every subset)
    std::vector<Anchor> anchors;
    for (int vi = 0; vi < static_cast<int>(val.size()); ++vi) {
      const Trajectory& traj = val[static_cast<std::size_t>(vi)];
      const auto trans = label_transitions(traj, horizon);
      // 1-based timestep t: context <= t, t + horizon <= T; array index t-1
      for (int t1 = cfg.context; t1 + horizon <= traj.length(); t1 += cfg.stride) {
        Anchor a;
        a.traj = vi;
        a.t = t1 - 1;
        a.horizon = horizon;
        a.transition = trans[static_cast<std::size_t>(a.t)] != 0;
        std::vector<double> gv, gw;
        std::vector<Action> cmd;
        for (int j = 1; j <= horizon; ++j) {
          const RobotState& s = traj.states[static_cast<std::size_t>(a.t + j)];
          gv.push_back(s.v);
          gw.push_back(s.omega);
          cmd.push_back(traj.actions[static_cast<std::size_t>(a.t + j)]);
        }
        const Pose gt = integrate_pose(gv, gw, ds.dt);
        a.control_err = final_pose_error(control_baseline(cmd, ds.dt), gt);
        anchors.push_back(std::move(a));
      }
    }

    std::vector<std::uint8_t> masks;
    std::vector<double> control_errs;
    for (const Anchor& a : anchors) {
      masks.push_back(a.transition ? 1 : 0);
      control_errs.push_back(a.control_err);
    }

    for (std::size_t si = 0; si < subsets.size(); ++si) {
      std::vector<double> errs(anchors.size());
      parallel_for(
          static_cast<int>(anchors.size()),
          [&](int ai) {
            const Anchor& a = anchors[static_cast<std::size_t>(ai)];
            const Trajectory& traj = val[static_cast<std::size_t>(a.traj)];
            const auto pred = predictor.predict(traj, subsets[si], a.t, a.horizon);
            std::vector<double> pv, pw, gv, gw;
            for (int j = 0; j < a.horizon; ++j) {
              pv.push_back(pred[static_cast<std::size_t>(j)].first);
              pw.push_back(pred[static_cast<std::size_t>(j)].second);
              const RobotState& s = traj.states[static_cast<std::size_t>(a.t + j + 1)];
              gv.push_back(s.v);
              gw.push_back(s.omega);
            }
            errs[static_cast<std::size_t>(ai)] = final_pose_error(
                integrate_pose(pv, pw, ds.dt), integrate_pose(gv, gw, ds.dt));
          },
          cfg.max_threads);

      AblationRow row;
      row.subset_name = names[si];
      row.horizon = horizon;
      row.stats.all = ErrorStats::from_samples(errs);
      auto [on, off] = transition_breakdown(errs, masks);
      row.stats.transition = on;
      row.stats.non_transition = off;
      report.rows.push_back(std::move(row));
    }

    AblationRow crow;
    crow.subset_name = "control";
    crow.horizon = horizon;
    crow.stats.all = ErrorStats::from_samples(control_errs);
    auto [con, coff] = transition_breakdown(control_errs, masks);
    crow.stats.transition = con;
    crow.stats.non_transition = coff;
    report.control_rows.push_back(std::move(crow));
  }
  return report;
}

namespace {

void append_rows(std::vector<nlohmann::json>& out, const AblationRow& row, double dt) {
  const struct {
    const char* group;
    const ErrorStats* st;
  } groups[] = {{"all", &row.stats.all},
                {"transition", &row.stats.transition},
                {"non_transition", &row.stats.non_transition}};
  for (const auto& g : groups) {
    out.push_back(nlohmann::json{{"ablation_subset", row.subset_name},
                                 {"horizon_s", row.horizon * dt},
                                 {"group", g.group},
                                 {"median_m", g.st->median},
                                 {"q1_m", g.st->q1},
                                 {"q3_m", g.st->q3},
                                 {"rmse_m", g.st->rmse},
                                 {"n", g.st->n}});
  }
}

std::vector<nlohmann::json> all_rows(const EvalReport& report) {
  std::vector<nlohmann::json> rows;
  for (const AblationRow& r : report.control_rows) append_rows(rows, r, report.dt);
  for (const AblationRow& r : report.rows) append_rows(rows, r, report.dt);
  return rows;
}

}  // namespace

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  check_arg(out.good(), "write_report_csv: cannot open " + path);
  out << "ablation_subset,horizon_s,group,median_m,q1_m,q3_m,rmse_m,n\n";
  for (const auto& r : all_rows(report)) {
    out << r.at("ablation_subset").get<std::string>() << ","
        << r.at("horizon_s").get<double>() << "," << r.at("group").get<std::string>() << ","
        << r.at("median_m").get<double>() << "," << r.at("q1_m").get<double>() << ","
        << r.at("q3_m").get<double>() << "," << r.at("rmse_m").get<double>() << ","
        << r.at("n").get<int>() << "\n";
  }
}

void write_report_json(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  check_arg(out.good(), "write_report_json: cannot open " + path);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : all_rows(report)) j.push_back(r);
  out << j.dump(2) << "\n";
}

}  // namespace mrssm
