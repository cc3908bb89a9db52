// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mrssm/kernels/kernels.hpp"
#include "mrssm/kernels/ref_kernels.hpp"
#include "mrssm/rng.hpp"

namespace kn = mrssm::kernels;

namespace {

std::vector<float> random_vec(mrssm::Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

struct BackendGuard {
  kn::Backend saved;
  BackendGuard() : saved(kn::active_backend()) {}
  ~BackendGuard() { kn::set_backend(saved); }
};

}  // namespace

TEST_CASE("backend selection and forcing") {
  BackendGuard guard;
  kn::set_backend(kn::Backend::kScalar);
  CHECK(kn::active_backend() == kn::Backend::kScalar);
  if (kn::cpu_has_avx2()) {
    kn::set_backend(kn::Backend::kAvx2);
    CHECK(kn::active_backend() == kn::Backend::kAvx2);
  } else {
    CHECK_THROWS_AS(kn::set_backend(kn::Backend::kAvx2), std::invalid_argument);
  }
}

TEST_CASE("matmul variants match a double-precision oracle") {
  mrssm::Rng rng(7, "kernels");
  // ragged sizes to exercise vector tails
  const int cases[][3] = {{1, 1, 1}, {3, 5, 7}, {16, 27, 64}, {13, 130, 9}, {8, 64, 33}};
  for (const auto& c : cases) {
    const int m = c[0], k = c[1], n = c[2];
    auto a = random_vec(rng, static_cast<std::size_t>(m) * k, -1.0, 1.0);
    auto b = random_vec(rng, static_cast<std::size_t>(k) * n, -1.0, 1.0);
    std::vector<double> ad(a.begin(), a.end()), bd(b.begin(), b.end());
    std::vector<double> cd(static_cast<std::size_t>(m) * n);
    mrssm::kernels::ref::matmul_nn<double>(ad.data(), bd.data(), cd.data(), m, k, n, false);

    std::vector<float> cf(static_cast<std::size_t>(m) * n);
    kn::matmul_nn(a.data(), b.data(), cf.data(), m, k, n, false);
    for (std::size_t i = 0; i < cf.size(); ++i) {
      CHECK(std::abs(cf[i] - cd[i]) < 1e-4);
    }

    // transpose variants vs rearranged nn
    std::vector<float> at(static_cast<std::size_t>(k) * m);
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) at[static_cast<std::size_t>(kk) * m + i] = a[static_cast<std::size_t>(i) * k + kk];
    }
    std::vector<float> c_tn(static_cast<std::size_t>(m) * n);
    kn::matmul_tn(at.data(), b.data(), c_tn.data(), m, k, n, false);
    std::vector<float> bt(static_cast<std::size_t>(n) * k);
    for (int kk = 0; kk < k; ++kk) {
      for (int j = 0; j < n; ++j) bt[static_cast<std::size_t>(j) * k + kk] = b[static_cast<std::size_t>(kk) * n + j];
    }
    std::vector<float> c_nt(static_cast<std::size_t>(m) * n);
    kn::matmul_nt(a.data(), bt.data(), c_nt.data(), m, k, n, false);
    for (std::size_t i = 0; i < cf.size(); ++i) {
      CHECK(std::abs(c_tn[i] - cd[i]) < 1e-4);
      CHECK(std::abs(c_nt[i] - cd[i]) < 1e-4);
    }
  }
}

TEST_CASE("matmul accumulate flag adds into the output") {
  std::vector<float> a = {1, 2, 3, 4};  // 2x2
  std::vector<float> b = {1, 0, 0, 1};
  std::vector<float> c = {10, 10, 10, 10};
  kn::matmul_nn(a.data(), b.data(), c.data(), 2, 2, 2, true);
  CHECK(c[0] == doctest::Approx(11));
  CHECK(c[1] == doctest::Approx(12));
  CHECK(c[2] == doctest::Approx(13));
  CHECK(c[3] == doctest::Approx(14));
}

TEST_CASE("scalar and AVX2 backends agree" * doctest::skip(!kn::cpu_has_avx2())) {
  BackendGuard guard;
  mrssm::Rng rng(21, "kernels-equiv");
  const std::size_t sizes[] = {1, 7, 8, 9, 64, 257, 1000};

  for (std::size_t n : sizes) {
    auto x = random_vec(rng, n, -6.0, 6.0);
    auto y = random_vec(rng, n, -6.0, 6.0);
    auto pos = random_vec(rng, n, 1e-4, 50.0);

    auto run = [&](kn::Backend b) {
      kn::set_backend(b);
      struct Out {
        std::vector<float> add, sub, mul, div, scale, axpy, fma, tanh, sig, exp, log, sp, sqrt;
        double sum;
      } o;
      o.add.resize(n); kn::vadd(x.data(), y.data(), o.add.data(), n);
      o.sub.resize(n); kn::vsub(x.data(), y.data(), o.sub.data(), n);
      o.mul.resize(n); kn::vmul(x.data(), y.data(), o.mul.data(), n);
      o.div.resize(n); kn::vdiv(x.data(), pos.data(), o.div.data(), n);
      o.scale.resize(n); kn::vscale(x.data(), 1.37f, o.scale.data(), n);
      o.axpy = y; kn::vaxpy(0.77f, x.data(), o.axpy.data(), n);
      o.fma = y; kn::vfma_acc(x.data(), y.data(), o.fma.data(), n);
      o.tanh.resize(n); kn::vtanh(x.data(), o.tanh.data(), n);
      o.sig.resize(n); kn::vsigmoid(x.data(), o.sig.data(), n);
      o.exp.resize(n); kn::vexp(x.data(), o.exp.data(), n);
      o.log.resize(n); kn::vlog(pos.data(), o.log.data(), n);
      o.sp.resize(n); kn::vsoftplus(x.data(), o.sp.data(), n);
      o.sqrt.resize(n); kn::vsqrt(pos.data(), o.sqrt.data(), n);
      o.sum = kn::vsum(x.data(), n);
      return o;
    };

    auto s = run(kn::Backend::kScalar);
    auto a = run(kn::Backend::kAvx2);

    auto close = [](const std::vector<float>& u, const std::vector<float>& v, double tol) {
      REQUIRE(u.size() == v.size());
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double err = std::abs(static_cast<double>(u[i]) - v[i]);
        const double lim = tol * std::max(1.0, std::abs(static_cast<double>(u[i])));
        if (err > lim) {
          CAPTURE(i);
          CAPTURE(u[i]);
          CAPTURE(v[i]);
          CHECK(err <= lim);
          return;
        }
      }
      CHECK(true);
    };

    // exact elementwise arithmetic: identical IEEE ops in both backends
    close(s.add, a.add, 0.0);
    close(s.sub, a.sub, 0.0);
    close(s.mul, a.mul, 0.0);
    close(s.div, a.div, 0.0);
    close(s.scale, a.scale, 0.0);
    close(s.sqrt, a.sqrt, 0.0);
    // FMA contraction differs
    close(s.axpy, a.axpy, 1e-6);
    close(s.fma, a.fma, 1e-6);
    // polynomial transcendentals
    close(s.tanh, a.tanh, 1e-6);
    close(s.sig, a.sig, 1e-6);
    close(s.exp, a.exp, 2e-6);
    close(s.log, a.log, 1e-6);
    close(s.sp, a.sp, 2e-6);
    CHECK(std::abs(s.sum - a.sum) <= 1e-9 * std::max(1.0, std::abs(s.sum)));
  }

  // matmul equivalence across backends
  for (const auto dims : {std::array<int, 3>{5, 17, 9}, std::array<int, 3>{32, 64, 48}}) {
    const int m = dims[0], k = dims[1], n = dims[2];
    auto a = random_vec(rng, static_cast<std::size_t>(m) * k, -1.0, 1.0);
    auto b = random_vec(rng, static_cast<std::size_t>(k) * n, -1.0, 1.0);
    std::vector<float> cs(static_cast<std::size_t>(m) * n), ca(cs.size());
    kn::set_backend(kn::Backend::kScalar);
    kn::matmul_nn(a.data(), b.data(), cs.data(), m, k, n, false);
    kn::set_backend(kn::Backend::kAvx2);
    kn::matmul_nn(a.data(), b.data(), ca.data(), m, k, n, false);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      CHECK(std::abs(cs[i] - ca[i]) <= 1e-5 * std::max(1.0f, std::abs(cs[i])));
    }
  }
}

TEST_CASE("vsum accumulates in double precision") {
  // 1e7 copies of 0.1f overflow f32 accumulation error budgets; f64 stays tight.
  const std::size_t n = 1 << 20;
  std::vector<float> x(n, 0.1f);
  const double s = kn::vsum(x.data(), n);
  const double expected = static_cast<double>(n) * static_cast<double>(0.1f);
  CHECK(std::abs(s - expected) / expected < 1e-12);
}
