// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over dense f32 tensors. Ops execute eagerly
// and append themselves to the tape in topological order; backward() walks the
// record in reverse. Storage is f32; reductions accumulate in f64. The tape
// can also replay any recorded subgraph in f64 (replay_f64), which gives the
// gradient checker a high-precision forward without touching the f32 path
// under test.
//
// Distinct tapes share no state and may be used from different threads; a
// single tape is not thread-safe.
#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mrssm/tensor.hpp"

namespace mrssm {

// Handle to a node on a specific tape.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. leaf() honors t.requires_grad; constant() never requires grad.
  Var leaf(Tensor t);
  Var constant(Tensor t);
  Var scalar_const(float v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(Var v) const { return node_at(v).value; }
  // Valid after backward(); zeros for nodes the output does not depend on.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return node_at(v).requires_grad; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const std::string& op_name(int node) const { return nodes_[static_cast<std::size_t>(node)].op; }
  // Index of the first node whose value holds a NaN/Inf, or -1.
  int first_nonfinite_node() const;

  // Elementwise binary ops. Shapes must match, or b may have a's shape minus
  // the leading dimension (broadcast over the leading/batch dimension only).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);

  Var add_scalar(Var a, float c);
  Var scale(Var a, float c);

  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var softplus(Var a);
  Var sqrt(Var a);
  Var square(Var a);
  Var reciprocal(Var a);

  Var matmul(Var a, Var b);  // (m,k) x (k,n) -> (m,n)

  Var sum(Var a);   // -> shape {1}
  Var mean(Var a);  // -> shape {1}
  // Sums over all axes except axis 0: (B, ...) -> (B)
  Var rowsum(Var a);

  Var concat(std::span<const Var> parts, int axis);
  Var slice(Var a, int axis, int start, int len);
  Var reshape(Var a, std::vector<int> shape);
  Var expand_rows(Var a, int rows);  // (d) -> (rows, d), explicit broadcast

  // x: (B,C,H,W), w: (F,C,kh,kw); zero padding, configurable stride.
  Var conv2d(Var x, Var w, int stride, int pad);
  // Transposed convolution, defined as the input-gradient of the matching
  // conv2d. x: (B,C,H,W), w: (C,F,kh,kw) -> (B,F,(H-1)*stride-2*pad+kh, ...).
  Var conv_transpose2d(Var x, Var w, int stride, int pad);
  Var add_channel_bias(Var x, Var b);  // (B,C,H,W) + (C)

  // Reverse pass from a scalar output. Rejects non-scalar outputs.
  void backward(Var out);

  // f64 forward replay of everything up to `out`, optionally overriding one
  // leaf coordinate; returns the (scalar) output value.
  double replay_f64(Var out) const;
  double replay_f64(Var out, Var leaf, int coord, double override_value) const;

 private:
  friend struct TapeOps;
  using Vals64 = std::vector<std::vector<double>>;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool is_leaf = false;
    std::string op;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> backward;                 // (tape, self-index)
    std::function<void(const Tape&, Vals64&, int)> fwd64;     // recompute in f64
  };

  Node& node_at(Var v);
  const Node& node_at(Var v) const;
  Tensor& grad_mut(int idx);

  // deque: appending never invalidates references to existing node values
  std::deque<Node> nodes_;
  bool grads_ready_ = false;
};

}  // namespace mrssm
