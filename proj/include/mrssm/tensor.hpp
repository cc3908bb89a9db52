// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mrssm {

// Dense row-major f32 array. Shape dims must be positive; numel == data size.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);  // zero-filled
  Tensor(std::vector<int> shape, std::vector<float> data);

  static Tensor scalar(float v);
  static Tensor full(std::vector<int> shape, float v);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int numel() const { return static_cast<int>(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  bool requires_grad = false;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

}  // namespace mrssm
