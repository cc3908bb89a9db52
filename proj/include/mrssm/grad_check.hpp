// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>

#include "mrssm/tape.hpp"
#include "mrssm/tensor.hpp"

namespace mrssm {

// Builds a scalar-valued graph from the given leaves.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares the f32 analytic gradients against central finite differences of
// the f64 tape replay. Returns the maximum over all leaf coordinates of
//   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(const GraphFn& fn, std::span<const Tensor> point, double step);

}  // namespace mrssm
