// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mrssm/distributions.hpp"
#include "mrssm/grad_check.hpp"
#include "mrssm/rng.hpp"
#include "mrssm/tape.hpp"

using mrssm::DiagGaussian;
using mrssm::Tape;
using mrssm::Tensor;
using mrssm::Var;

namespace {

DiagGaussian make_g(Tape& t, std::vector<float> mean, std::vector<float> std) {
  const int d = static_cast<int>(mean.size());
  return DiagGaussian{t.constant(Tensor({1, d}, std::move(mean))),
                      t.constant(Tensor({1, d}, std::move(std)))};
}

struct GaussParam {
  double mean, std;
};

// Test-side oracle: numerically integrate the pointwise product of densities
// on a 1-D grid, renormalize, and report its mean and standard deviation.
std::pair<double, double> grid_product_moments(const std::vector<GaussParam>& gs) {
  double lo = 1e300, hi = -1e300, min_std = 1e300;
  for (const auto& g : gs) {
    lo = std::min(lo, g.mean - 14.0 * g.std);
    hi = std::max(hi, g.mean + 14.0 * g.std);
    min_std = std::min(min_std, g.std);
  }
  const double h = min_std / 64.0;
  const int n = static_cast<int>((hi - lo) / h) + 1;
  std::vector<double> logp(static_cast<std::size_t>(n));
  double log_max = -1e300;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * h;
    double lp = 0.0;
    for (const auto& g : gs) {
      const double z = (x - g.mean) / g.std;
      lp += -0.5 * z * z - std::log(g.std) - 0.5 * std::log(2.0 * M_PI);
    }
    logp[static_cast<std::size_t>(i)] = lp;
    log_max = std::max(log_max, lp);
  }
  double z0 = 0.0, z1 = 0.0, z2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * h;
    const double p = std::exp(logp[static_cast<std::size_t>(i)] - log_max);
    z0 += p;
    z1 += p * x;
    z2 += p * x * x;
  }
  const double mean = z1 / z0;
  const double var = z2 / z0 - mean * mean;
  return {mean, std::sqrt(var)};
}

}  // namespace

TEST_CASE("poe_fuse: single expert passes through unchanged") {
  Tape t;
  DiagGaussian g = make_g(t, {0.5f}, {2.0f});
  const DiagGaussian f = mrssm::poe_fuse(t, std::span<const DiagGaussian>(&g, 1));
  CHECK(f.mean.idx == g.mean.idx);
  CHECK(f.stddev.idx == g.stddev.idx);
}

TEST_CASE("poe_fuse: two standard normals halve the variance") {
  Tape t;
  const DiagGaussian gs[] = {make_g(t, {0.0f}, {1.0f}), make_g(t, {0.0f}, {1.0f})};
  const DiagGaussian f = mrssm::poe_fuse(t, gs);
  CHECK(t.value(f.mean)[0] == doctest::Approx(0.0));
  CHECK(t.value(f.stddev)[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
}

TEST_CASE("poe_fuse matches the renormalized density product") {
  SUBCASE("hand case N(0,1) x N(2,2) -> N(0.4, var 0.8)") {
    Tape t;
    const DiagGaussian gs[] = {make_g(t, {0.0f}, {1.0f}), make_g(t, {2.0f}, {2.0f})};
    const DiagGaussian f = mrssm::poe_fuse(t, gs);
    const auto [om, os] = grid_product_moments({{0.0, 1.0}, {2.0, 2.0}});
    CHECK(t.value(f.mean)[0] == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(t.value(f.stddev)[0] == doctest::Approx(std::sqrt(0.8)).epsilon(1e-6));
    CHECK(std::abs(t.value(f.mean)[0] - om) < 1e-6);
    CHECK(std::abs(t.value(f.stddev)[0] - os) < 1e-6);
  }
  SUBCASE("random products of 2-4 gaussians vs grid integration") {
    mrssm::Rng rng(41, "dist-poe");
    for (int rep = 0; rep < 20; ++rep) {
      const int k = rng.uniform_int(2, 4);
      std::vector<GaussParam> params;
      Tape t;
      std::vector<DiagGaussian> gs;
      for (int i = 0; i < k; ++i) {
        const double m = rng.uniform(-2.0, 2.0);
        const double s = rng.uniform(0.3, 3.0);
        params.push_back({m, s});
        gs.push_back(make_g(t, {static_cast<float>(m)}, {static_cast<float>(s)}));
      }
      const DiagGaussian f = mrssm::poe_fuse(t, gs);
      const auto [om, os] = grid_product_moments(params);
      CHECK(std::abs(t.value(f.mean)[0] - om) < 1e-6);
      CHECK(std::abs(t.value(f.stddev)[0] - os) < 1e-6);
    }
  }
}

TEST_CASE("poe_fuse properties") {
  mrssm::Rng rng(43, "dist-props");
  SUBCASE("order invariance") {
    Tape t;
    DiagGaussian a = make_g(t, {0.3f, -1.0f}, {0.7f, 2.0f});
    DiagGaussian b = make_g(t, {1.5f, 0.2f}, {1.1f, 0.4f});
    DiagGaussian c = make_g(t, {-0.5f, 0.9f}, {2.5f, 1.3f});
    const DiagGaussian abc[] = {a, b, c};
    const DiagGaussian cba[] = {c, b, a};
    const DiagGaussian f1 = mrssm::poe_fuse(t, abc);
    const DiagGaussian f2 = mrssm::poe_fuse(t, cba);
    for (int i = 0; i < 2; ++i) {
      CHECK(t.value(f1.mean)[i] == doctest::Approx(t.value(f2.mean)[i]).epsilon(1e-6));
      CHECK(t.value(f1.stddev)[i] == doctest::Approx(t.value(f2.stddev)[i]).epsilon(1e-6));
    }
  }
  SUBCASE("fused variance never exceeds any expert variance") {
    for (int rep = 0; rep < 50; ++rep) {
      Tape t;
      const int k = rng.uniform_int(2, 5);
      std::vector<DiagGaussian> gs;
      float min_std = 1e30f;
      for (int i = 0; i < k; ++i) {
        const float s = static_cast<float>(rng.uniform(0.1, 5.0));
        min_std = std::min(min_std, s);
        gs.push_back(make_g(t, {static_cast<float>(rng.uniform(-3, 3))}, {s}));
      }
      const DiagGaussian f = mrssm::poe_fuse(t, gs);
      CHECK(t.value(f.stddev)[0] <= min_std * (1.0f + 1e-6f));
    }
  }
  SUBCASE("an expert with stddev >= 1e6 is uninformative") {
    Tape t;
    DiagGaussian a = make_g(t, {0.4f}, {0.8f});
    DiagGaussian b = make_g(t, {-1.0f}, {1.7f});
    DiagGaussian wide = make_g(t, {123.0f}, {1e6f});
    const DiagGaussian two[] = {a, b};
    const DiagGaussian three[] = {a, b, wide};
    const DiagGaussian f2 = mrssm::poe_fuse(t, two);
    const DiagGaussian f3 = mrssm::poe_fuse(t, three);
    CHECK(std::abs(t.value(f3.mean)[0] - t.value(f2.mean)[0]) <
          1e-5f * std::abs(t.value(f2.mean)[0]) + 1e-7f);
    CHECK(std::abs(t.value(f3.stddev)[0] - t.value(f2.stddev)[0]) <
          1e-5f * t.value(f2.stddev)[0]);
  }
  SUBCASE("empty list and dimension mismatch are rejected") {
    Tape t;
    CHECK_THROWS_AS(mrssm::poe_fuse(t, {}), std::invalid_argument);
    DiagGaussian a = make_g(t, {0.0f}, {1.0f});
    DiagGaussian b = make_g(t, {0.0f, 1.0f}, {1.0f, 1.0f});
    const DiagGaussian bad[] = {a, b};
    CHECK_THROWS_AS(mrssm::poe_fuse(t, bad), std::invalid_argument);
  }
}

TEST_CASE("kl divergence closed form") {
  auto kl_of = [](std::vector<float> mq, std::vector<float> sq, std::vector<float> mp,
                  std::vector<float> sp) {
    Tape t;
    DiagGaussian q = make_g(t, std::move(mq), std::move(sq));
    DiagGaussian p = make_g(t, std::move(mp), std::move(sp));
    return t.value(mrssm::kl_divergence(t, q, p))[0];
  };
  CHECK(kl_of({0}, {1}, {0}, {1}) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(kl_of({1}, {1}, {0}, {1}) == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(kl_of({0}, {2}, {0}, {1}) == doctest::Approx(0.80685).epsilon(1e-4));

  SUBCASE("kl(q,q) ~ 0 and kl >= 0 on random pairs") {
    mrssm::Rng rng(47, "dist-kl");
    for (int rep = 0; rep < 100; ++rep) {
      const float m1 = static_cast<float>(rng.uniform(-3, 3));
      const float s1 = static_cast<float>(rng.uniform(0.2, 4.0));
      const float m2 = static_cast<float>(rng.uniform(-3, 3));
      const float s2 = static_cast<float>(rng.uniform(0.2, 4.0));
      CHECK(kl_of({m1}, {s1}, {m1}, {s1}) == doctest::Approx(0.0).epsilon(1e-7));
      CHECK(kl_of({m1}, {s1}, {m2}, {s2}) >= -1e-7f);
    }
  }
  SUBCASE("monte carlo oracle agrees") {
    mrssm::Rng rng(53, "dist-klmc");
    for (int rep = 0; rep < 5; ++rep) {
      const double mq = rng.uniform(-2, 2), sq = rng.uniform(0.3, 2.5);
      const double mp = rng.uniform(-2, 2), sp = rng.uniform(0.3, 2.5);
      const double closed =
          kl_of({static_cast<float>(mq)}, {static_cast<float>(sq)},
                {static_cast<float>(mp)}, {static_cast<float>(sp)});
      const int n = 1000000;
      double acc = 0.0, acc2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double z = rng.normal(mq, sq);
        const double lq = -0.5 * ((z - mq) / sq) * ((z - mq) / sq) - std::log(sq);
        const double lp = -0.5 * ((z - mp) / sp) * ((z - mp) / sp) - std::log(sp);
        acc += lq - lp;
        acc2 += (lq - lp) * (lq - lp);
      }
      const double mc = acc / n;
      const double se = std::sqrt((acc2 / n - mc * mc) / n);
      CHECK(std::abs(closed - mc) <= std::max(0.01 * std::abs(closed), 3.0 * se));
    }
  }
  SUBCASE("dimension mismatch rejected") {
    Tape t;
    DiagGaussian q = make_g(t, {0, 0}, {1, 1});
    DiagGaussian p = make_g(t, {0}, {1});
    CHECK_THROWS_AS(mrssm::kl_divergence(t, q, p), std::invalid_argument);
  }
}

TEST_CASE("rsample") {
  SUBCASE("zero noise returns the mean exactly") {
    Tape t;
    DiagGaussian g = make_g(t, {1.25f, -3.0f}, {2.0f, 0.5f});
    Var s = mrssm::rsample(t, g, Tensor({1, 2}));
    CHECK(t.value(s)[0] == 1.25f);
    CHECK(t.value(s)[1] == -3.0f);
  }
  SUBCASE("standard normal passes noise through") {
    Tape t;
    DiagGaussian g = make_g(t, {0.0f}, {1.0f});
    Var s = mrssm::rsample(t, g, Tensor({1, 1}, {1.5f}));
    CHECK(t.value(s)[0] == doctest::Approx(1.5));
  }
  SUBCASE("sample statistics match the distribution") {
    mrssm::Rng rng(59, "dist-rs");
    const int n = 100000;
    double acc = 0.0, acc2 = 0.0;
    Tape t;
    DiagGaussian g = make_g(t, {2.0f}, {3.0f});
    for (int i = 0; i < n; ++i) {
      Tensor noise({1, 1}, {static_cast<float>(rng.normal())});
      const double v = t.value(mrssm::rsample(t, g, noise))[0];
      acc += v;
      acc2 += v * v;
    }
    const double mean = acc / n;
    const double sd = std::sqrt(acc2 / n - mean * mean);
    CHECK(mean == doctest::Approx(2.0).epsilon(0.02));
    CHECK(sd == doctest::Approx(3.0).epsilon(0.02));
  }
  SUBCASE("noise dimension mismatch rejected") {
    Tape t;
    DiagGaussian g = make_g(t, {0.0f}, {1.0f});
    CHECK_THROWS_AS(mrssm::rsample(t, g, Tensor({1, 3})), std::invalid_argument);
  }
}

TEST_CASE("log_prob") {
  auto lp = [](std::vector<float> m, std::vector<float> s, std::vector<float> x) {
    Tape t;
    DiagGaussian g = make_g(t, std::move(m), std::move(s));
    const int d = static_cast<int>(x.size());
    return t.value(mrssm::log_prob(t, g, t.constant(Tensor({1, d}, std::move(x)))))[0];
  };
  CHECK(lp({0}, {1}, {0}) == doctest::Approx(-0.91894).epsilon(1e-4));
  CHECK(lp({0}, {1}, {1}) == doctest::Approx(-1.41894).epsilon(1e-4));
  CHECK(lp({0, 0}, {1, 2}, {0, 0}) == doctest::Approx(-2.53102).epsilon(1e-4));
  Tape t;
  DiagGaussian g = make_g(t, {0.0f}, {1.0f});
  CHECK_THROWS_AS(mrssm::log_prob(t, g, t.constant(Tensor({1, 2}))), std::invalid_argument);
}

TEST_CASE("stddev parameterization keeps the floor") {
  Tape t;
  Var mean = t.constant(Tensor({1, 3}));
  Var raw = t.constant(Tensor({1, 3}, {-50.0f, 0.0f, 50.0f}));
  const DiagGaussian g = mrssm::gaussian_from_raw(t, mean, raw);
  const Tensor& s = t.value(g.stddev);
  CHECK(s[0] >= mrssm::kStddevFloor);
  CHECK(s[0] == doctest::Approx(mrssm::kStddevFloor).epsilon(1e-3));
  CHECK(s[1] == doctest::Approx(std::log(2.0) + mrssm::kStddevFloor).epsilon(1e-5));
  CHECK(s[2] == doctest::Approx(50.0).epsilon(1e-5));
}

TEST_CASE("poe + kl + log_prob pipeline is differentiable") {
  mrssm::Rng rng(61, "dist-grad");
  Tensor m1 = rng.normal_tensor({1, 3});
  Tensor r1 = rng.normal_tensor({1, 3});
  Tensor m2 = rng.normal_tensor({1, 3});
  Tensor r2 = rng.normal_tensor({1, 3});
  mrssm::GraphFn fn = [](Tape& t, std::span<const Var> l) {
    const DiagGaussian a = mrssm::gaussian_from_raw(t, l[0], l[1]);
    const DiagGaussian b = mrssm::gaussian_from_raw(t, l[2], l[3]);
    const DiagGaussian gs[] = {a, b};
    const DiagGaussian f = mrssm::poe_fuse(t, gs);
    const DiagGaussian unit = mrssm::unit_gaussian(t, {1, 3});
    Var kl = mrssm::kl_divergence(t, f, unit);
    Var s = mrssm::rsample(t, f, Tensor({1, 3}, {0.3f, -0.7f, 1.1f}));
    Var lp = mrssm::log_prob(t, unit, s);
    return t.sum(t.add(kl, lp));
  };
  const Tensor point[] = {m1, r1, m2, r2};
  CHECK(mrssm::grad_check(fn, point, 1e-3) < 1e-4);
}
