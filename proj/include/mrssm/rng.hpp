// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "mrssm/tensor.hpp"

namespace mrssm {

// Deterministic RNG derived from a root seed plus a named sub-stream and an
// index. All randomness in the project flows through (seed, stream, index)
// triples so every pipeline stage is reproducible in isolation.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

  std::uint64_t next_u64() { return eng_(); }
  double uniform(double lo = 0.0, double hi = 1.0);
  int uniform_int(int lo, int hi);  // inclusive bounds
  double normal(double mean = 0.0, double stddev = 1.0);
  Tensor normal_tensor(std::vector<int> shape, double mean = 0.0, double stddev = 1.0);

 private:
  std::mt19937_64 eng_;
};

}  // namespace mrssm
