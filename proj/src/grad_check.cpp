// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/grad_check.hpp"

#include <cmath>
#include <vector>

#include "mrssm/util.hpp"

namespace mrssm {

double grad_check(const GraphFn& fn, std::span<const Tensor> point, double step) {
  check_arg(step > 0.0, "grad_check: step must be positive");
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const Tensor& t : point) {
    Tensor copy = t;
    copy.requires_grad = true;
    leaves.push_back(tape.leaf(std::move(copy)));
  }
  const Var out = fn(tape, leaves);
  check_arg(tape.value(out).numel() == 1, "grad_check: function must be scalar-valued");
  tape.backward(out);

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& g = tape.grad(leaves[li]);
    const Tensor& x = tape.value(leaves[li]);
    for (int c = 0; c < x.numel(); ++c) {
      const double x0 = static_cast<double>(x[c]);
      const double fp = tape.replay_f64(out, leaves[li], c, x0 + step);
      const double fm = tape.replay_f64(out, leaves[li], c, x0 - step);
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = static_cast<double>(g[c]);
      const double rel = std::abs(analytic - numeric) /
                         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace mrssm
