// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/tensor.hpp"

#include <cmath>
#include <cstdint>

#include "mrssm/util.hpp"

namespace mrssm {

namespace {
std::size_t checked_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    check_arg(d > 0, "Tensor: shape dims must be positive, got " +
                         shape_str(std::span<const int>(shape)));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(checked_numel(shape_), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_arg(checked_numel(shape_) == data_.size(),
            "Tensor: data size " + std::to_string(data_.size()) +
                " does not match shape " + ::mrssm::shape_str(std::span<const int>(shape_)));
}

Tensor Tensor::scalar(float v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<int> shape, float v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

bool Tensor::all_finite() const {
  for (float x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  return ::mrssm::shape_str(std::span<const int>(shape_));
}

}  // namespace mrssm
