// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Diagonal-Gaussian algebra on tape variables: product-of-experts fusion,
// closed-form KL, reparameterized sampling, log-likelihood. Everything is
// differentiable through the tape.
#pragma once

#include <span>

#include "mrssm/tape.hpp"

namespace mrssm {

// mean and stddev share a (B, d...) shape; stddev is strictly positive.
struct DiagGaussian {
  Var mean;
  Var stddev;
};

// Minimum stddev produced by the softplus parameterization.
inline constexpr float kStddevFloor = 1e-4f;

// stddev = softplus(raw) + floor; keeps precisions and KL finite.
DiagGaussian gaussian_from_raw(Tape& t, Var mean, Var raw_stddev);

DiagGaussian unit_gaussian(Tape& t, std::vector<int> shape);

// Product of experts: precisions add, precision-weighted means combine.
// The normalization constant of the density product cancels analytically and
// is never materialized. A single expert passes through unchanged.
DiagGaussian poe_fuse(Tape& t, std::span<const DiagGaussian> experts);

// KL(q || p) summed over non-batch dims -> (B)
Var kl_divergence(Tape& t, const DiagGaussian& q, const DiagGaussian& p);

// Gaussian log-density of x, summed over non-batch dims -> (B)
Var log_prob(Tape& t, const DiagGaussian& g, Var x);

// mean + stddev ⊙ noise. noise is a constant: gradients flow to mean/stddev.
Var rsample(Tape& t, const DiagGaussian& g, const Tensor& noise);

}  // namespace mrssm
