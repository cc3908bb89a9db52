// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/distributions.hpp"

#include <cmath>

#include "mrssm/util.hpp"

namespace mrssm {

namespace {
constexpr float kHalfLog2Pi = 0.91893853320467274f;  // 0.5 * ln(2*pi)

void check_same_shape(const Tape& t, Var a, Var b, const char* op) {
  check_arg(t.value(a).same_shape(t.value(b)),
            std::string(op) + ": dimension mismatch " + t.value(a).shape_str() + " vs " +
                t.value(b).shape_str());
}
}  // namespace

DiagGaussian gaussian_from_raw(Tape& t, Var mean, Var raw_stddev) {
  check_same_shape(t, mean, raw_stddev, "gaussian_from_raw");
  return DiagGaussian{mean, t.add_scalar(t.softplus(raw_stddev), kStddevFloor)};
}

DiagGaussian unit_gaussian(Tape& t, std::vector<int> shape) {
  Var mean = t.constant(Tensor(shape));
  Var std = t.constant(Tensor::full(std::move(shape), 1.0f));
  return DiagGaussian{mean, std};
}

DiagGaussian poe_fuse(Tape& t, std::span<const DiagGaussian> experts) {
  check_arg(!experts.empty(), "poe_fuse: empty expert list");
  for (const DiagGaussian& e : experts) {
    check_same_shape(t, e.mean, experts[0].mean, "poe_fuse");
    check_same_shape(t, e.stddev, experts[0].stddev, "poe_fuse");
  }
  if (experts.size() == 1) return experts[0];

  // tau = sum of precisions; fused var = 1/tau; fused mean = (sum mu*tau)/tau
  Var tau;
  Var mu_tau;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const Var prec = t.reciprocal(t.square(experts[i].stddev));
    const Var mp = t.mul(experts[i].mean, prec);
    tau = i == 0 ? prec : t.add(tau, prec);
    mu_tau = i == 0 ? mp : t.add(mu_tau, mp);
  }
  const Var fused_var = t.reciprocal(tau);
  return DiagGaussian{t.mul(mu_tau, fused_var), t.sqrt(fused_var)};
}

Var kl_divergence(Tape& t, const DiagGaussian& q, const DiagGaussian& p) {
  check_same_shape(t, q.mean, p.mean, "kl_divergence");
  check_same_shape(t, q.stddev, p.stddev, "kl_divergence");
  // ln(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2, per dimension
  const Var log_ratio = t.sub(t.log(p.stddev), t.log(q.stddev));
  const Var num = t.add(t.square(q.stddev), t.square(t.sub(q.mean, p.mean)));
  const Var quad = t.mul(num, t.scale(t.reciprocal(t.square(p.stddev)), 0.5f));
  return t.rowsum(t.add_scalar(t.add(log_ratio, quad), -0.5f));
}

Var log_prob(Tape& t, const DiagGaussian& g, Var x) {
  check_same_shape(t, g.mean, x, "log_prob");
  const Var z = t.div(t.sub(x, g.mean), g.stddev);
  const Var per_dim =
      t.add_scalar(t.sub(t.scale(t.square(z), -0.5f), t.log(g.stddev)), -kHalfLog2Pi);
  return t.rowsum(per_dim);
}

Var rsample(Tape& t, const DiagGaussian& g, const Tensor& noise) {
  check_arg(t.value(g.mean).shape() == noise.shape(),
            "rsample: dimension mismatch " + t.value(g.mean).shape_str() + " vs noise " +
                noise.shape_str());
  return t.add(g.mean, t.mul(g.stddev, t.constant(noise)));
}

}  // namespace mrssm
