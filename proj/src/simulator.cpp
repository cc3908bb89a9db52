// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "mrssm/util.hpp"

namespace mrssm {

namespace {

constexpr std::array<float, 3> kOutOfBoundsColor = {0.05f, 0.05f, 0.10f};

const std::array<float, 3> kClassColors[] = {
    {0.50f, 0.50f, 0.50f},  // rock, high traction
    {0.55f, 0.35f, 0.15f},  // dirt
    {0.92f, 0.95f, 0.98f},  // ice, low traction
    {0.20f, 0.55f, 0.20f},  // extra classes cycle through
    {0.80f, 0.70f, 0.20f},
};

std::array<float, 3> cell_color(const TerrainMap& map, int cx, int cy) {
  if (cx < 0 || cy < 0 || cx >= map.cells_w || cy >= map.cells_h) return kOutOfBoundsColor;
  return map.colors[map.cls[static_cast<std::size_t>(cy) * map.cells_w + cx]];
}

std::array<float, 3> sample_color(const TerrainMap& map, double wx, double wy) {
  // bilinear blend of the four surrounding cell-center colors
  const double gx = wx / map.cell_m - 0.5;
  const double gy = wy / map.cell_m - 0.5;
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  const float fx = static_cast<float>(gx - x0);
  const float fy = static_cast<float>(gy - y0);
  const auto c00 = cell_color(map, x0, y0);
  const auto c10 = cell_color(map, x0 + 1, y0);
  const auto c01 = cell_color(map, x0, y0 + 1);
  const auto c11 = cell_color(map, x0 + 1, y0 + 1);
  std::array<float, 3> out;
  for (int k = 0; k < 3; ++k) {
    const float top = c00[k] * (1 - fx) + c10[k] * fx;
    const float bot = c01[k] * (1 - fx) + c11[k] * fx;
    out[k] = top * (1 - fy) + bot * fy;
  }
  return out;
}

}  // namespace

int TerrainMap::class_at(double x, double y) const {
  if (!inside(x, y)) return -1;
  const int cx = std::min(static_cast<int>(x / cell_m), cells_w - 1);
  const int cy = std::min(static_cast<int>(y / cell_m), cells_h - 1);
  return cls[static_cast<std::size_t>(cy) * cells_w + cx];
}

double TerrainMap::mu_at(double x, double y) const {
  const int c = class_at(x, y);
  check_arg(c >= 0, "TerrainMap::mu_at: point off the map");
  return mu[static_cast<std::size_t>(c)];
}

TerrainMap make_terrain_map(const SimParams& p, Rng& rng) {
  check_arg(!p.mu.empty() && p.mu.size() == p.class_weights.size(),
            "make_terrain_map: mu and class_weights must list one entry per class");
  for (double m : p.mu) check_arg(m > 0 && m <= 1.0, "make_terrain_map: mu must be in (0,1]");
  TerrainMap map;
  map.cell_m = p.cell_m;
  map.cells_w = map.cells_h = std::max(1, static_cast<int>(std::lround(p.world_m / p.cell_m)));
  map.mu = p.mu;
  const int n_classes = static_cast<int>(p.mu.size());
  for (int c = 0; c < n_classes; ++c) {
    map.colors.push_back(kClassColors[c % (sizeof(kClassColors) / sizeof(kClassColors[0]))]);
  }

  double wsum = 0;
  for (double w : p.class_weights) wsum += w;
  struct Seed {
    double x, y;
    int cls;
  };
  std::vector<Seed> seeds;
  for (int i = 0; i < std::max(1, p.blob_seeds); ++i) {
    const double r = rng.uniform(0.0, wsum);
    int c = 0;
    double acc = 0;
    for (int k = 0; k < n_classes; ++k) {
      acc += p.class_weights[static_cast<std::size_t>(k)];
      if (r <= acc) {
        c = k;
        break;
      }
    }
    seeds.push_back({rng.uniform(0.0, map.world_w()), rng.uniform(0.0, map.world_h()), c});
  }

  map.cls.resize(static_cast<std::size_t>(map.cells_w) * map.cells_h);
  for (int cy = 0; cy < map.cells_h; ++cy) {
    for (int cx = 0; cx < map.cells_w; ++cx) {
      const double x = (cx + 0.5) * map.cell_m;
      const double y = (cy + 0.5) * map.cell_m;
      double best = 1e300;
      int best_cls = 0;
      for (const Seed& s : seeds) {
        const double d = (s.x - x) * (s.x - x) + (s.y - y) * (s.y - y);
        if (d < best) {
          best = d;
          best_cls = s.cls;
        }
      }
      map.cls[static_cast<std::size_t>(cy) * map.cells_w + cx] =
          static_cast<std::uint8_t>(best_cls);
    }
  }
  return map;
}

double wrap_angle(double theta) {
  double t = std::remainder(theta, 2.0 * M_PI);
  if (t <= -M_PI) t += 2.0 * M_PI;
  return t;
}

void advance_pose(double& x, double& y, double& theta, double v, double omega, double dt) {
  check_arg(dt > 0, "advance_pose: dt must be positive");
  if (std::abs(omega) < 1e-8) {
    x += v * dt * std::cos(theta);
    y += v * dt * std::sin(theta);
    theta = wrap_angle(theta + omega * dt);
    return;
  }
  const double theta2 = theta + omega * dt;
  x += v / omega * (std::sin(theta2) - std::sin(theta));
  y -= v / omega * (std::cos(theta2) - std::cos(theta));
  theta = wrap_angle(theta2);
}

RobotState step_dynamics(const RobotState& s, const Action& a, double mu, double dt,
                         double gain, double sigma_dyn, Rng* noise) {
  check_arg(dt > 0, "step_dynamics: dt must be positive");
  check_arg(mu > 0 && mu <= 1.0, "step_dynamics: mu must be in (0,1]");
  const double g = std::min(1.0, gain * mu * dt);
  RobotState n = s;
  n.v = s.v + g * (a.v_target - s.v);
  n.omega = s.omega + g * (a.omega_target - s.omega);
  if (noise != nullptr && sigma_dyn > 0) {
    n.v += noise->normal(0.0, sigma_dyn);
    n.omega += noise->normal(0.0, sigma_dyn);
  }
  advance_pose(n.x, n.y, n.theta, n.v, n.omega, dt);
  return n;
}

Tensor render_patch(const TerrainMap& map, const RobotState& s, const SimParams& p, Rng* noise) {
  check_arg(map.inside(s.x, s.y), "render_patch: robot outside the map");
  const int size = p.img_size;
  Tensor img({3, size, size});
  const double px = p.patch_m / size;
  const double fx = std::cos(s.theta), fy = std::sin(s.theta);
  const double lx = -std::sin(s.theta), ly = std::cos(s.theta);
  for (int r = 0; r < size; ++r) {
    const double fwd = (size - (r + 0.5)) * px;  // top row looks farthest ahead
    for (int c = 0; c < size; ++c) {
      const double left = (size / 2.0 - (c + 0.5)) * px;
      const double wx = s.x + fwd * fx + left * lx;
      const double wy = s.y + fwd * fy + left * ly;
      const auto color = sample_color(map, wx, wy);
      for (int k = 0; k < 3; ++k) {
        float v = color[static_cast<std::size_t>(k)];
        if (noise != nullptr && p.sigma_img > 0) {
          v += static_cast<float>(noise->normal(0.0, p.sigma_img));
        }
        img[(k * size + r) * size + c] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return img;
}

std::vector<ModalitySpec> sim_modalities(const SimParams& p) {
  return {
      {"lin_vel", ModalityKind::kDense, {1}, 1.0f},
      {"ang_vel", ModalityKind::kDense, {1}, 1.0f},
      {"accel", ModalityKind::kDense, {1}, 1.0f},
      {"image", ModalityKind::kImage, {3, p.img_size, p.img_size}, 0.05f},
  };
}

ObservationSet Trajectory::observation_at(int t, std::span<const ModalitySpec> mods) const {
  check_arg(t >= 0 && t < length(), "observation_at: index out of range");
  ObservationSet out;
  for (const ModalitySpec& m : mods) {
    const auto oit = obs.find(m.name);
    const auto mit = mask.find(m.name);
    check_arg(oit != obs.end() && mit != mask.end(),
              "observation_at: trajectory lacks modality " + m.name);
    if (!mit->second[static_cast<std::size_t>(t)]) {
      out.values.emplace_back(std::nullopt);
      continue;
    }
    const int n = m.numel();
    std::vector<int> shape = m.shape;
    std::vector<float> data(oit->second.begin() + static_cast<std::ptrdiff_t>(t) * n,
                            oit->second.begin() + static_cast<std::ptrdiff_t>(t + 1) * n);
    out.values.emplace_back(Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

Trajectory gen_trajectory(const TerrainMap& map, const SimParams& p, int steps, Rng rng,
                          std::optional<RobotState> init) {
  check_arg(steps >= 2, "gen_trajectory: need at least 2 steps");
  Trajectory traj;
  traj.dt = p.dt;

  RobotState state;
  if (init.has_value()) {
    state = *init;
  } else {
    // spawn away from the edges so trajectories rarely truncate
    state.x = rng.uniform(0.3, 0.7) * map.world_w();
    state.y = rng.uniform(0.3, 0.7) * map.world_h();
    state.theta = rng.uniform(-M_PI, M_PI);
  }
  check_arg(map.inside(state.x, state.y), "gen_trajectory: start position off the map");
  traj.init_state = state;

  const auto mods = sim_modalities(p);
  for (const auto& m : mods) {
    traj.obs[m.name] = {};
    traj.mask[m.name] = {};
  }

  Action act{};
  for (int t = 0; t < steps; ++t) {
    if (t % std::max(1, p.action_hold) == 0) {
      const double av = rng.normal(0.5 * p.v_max, 0.15 * p.v_max);
      act.v_target = static_cast<float>(std::clamp(av, 0.0, p.v_max));
      act.omega_target = static_cast<float>(rng.normal(0.0, 0.3));
    }
    const double prev_v = state.v;
    const double mu = map.mu_at(state.x, state.y);
    state = step_dynamics(state, act, mu, p.dt, p.gain, p.sigma_dyn, &rng);
    if (!map.inside(state.x, state.y)) break;  // truncate at map exit

    traj.actions.push_back(act);
    traj.states.push_back(state);
    traj.terrain.push_back(map.class_at(state.x, state.y));
    traj.obs["lin_vel"].push_back(static_cast<float>(state.v + rng.normal(0.0, p.sigma_obs)));
    traj.obs["ang_vel"].push_back(static_cast<float>(state.omega + rng.normal(0.0, p.sigma_obs)));
    traj.obs["accel"].push_back(
        static_cast<float>((state.v - prev_v) / p.dt + rng.normal(0.0, p.sigma_obs)));
    const Tensor img = render_patch(map, state, p, &rng);
    auto& img_data = traj.obs["image"];
    img_data.insert(img_data.end(), img.vec().begin(), img.vec().end());
    for (const auto& m : mods) traj.mask[m.name].push_back(1);
  }
  check_arg(traj.length() >= 2,
            "gen_trajectory: trajectory left the map before reaching minimum length 2");
  return traj;
}

std::vector<std::uint8_t> label_transitions(const Trajectory& traj, int window) {
  check_arg(window >= 1, "label_transitions: window must be >= 1");
  const int n = traj.length();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
  for (int t = 0; t < n; ++t) {
    const int lo = std::max(t, 1);
    const int hi = std::min(t + window, n - 1);
    for (int e = lo; e <= hi; ++e) {
      if (traj.terrain[static_cast<std::size_t>(e)] !=
          traj.terrain[static_cast<std::size_t>(e - 1)]) {
        mask[static_cast<std::size_t>(t)] = 1;
        break;
      }
    }
  }
  return mask;
}

}  // namespace mrssm
