// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mrssm/kernels/kernels.hpp"
#include "mrssm/kernels/ref_kernels.hpp"
#include "mrssm/util.hpp"

namespace mrssm {

namespace kn = ::mrssm::kernels;
namespace kr = ::mrssm::kernels::ref;

namespace {

enum class BinOp { kAdd, kSub, kMul, kDiv };
enum class UnOp { kTanh, kSigmoid, kExp, kLog, kSoftplus, kSqrt, kSquare, kReciprocal };

const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::kAdd: return "add";
    case BinOp::kSub: return "sub";
    case BinOp::kMul: return "mul";
    case BinOp::kDiv: return "div";
  }
  return "?";
}

const char* un_name(UnOp op) {
  switch (op) {
    case UnOp::kTanh: return "tanh";
    case UnOp::kSigmoid: return "sigmoid";
    case UnOp::kExp: return "exp";
    case UnOp::kLog: return "log";
    case UnOp::kSoftplus: return "softplus";
    case UnOp::kSqrt: return "sqrt";
    case UnOp::kSquare: return "square";
    case UnOp::kReciprocal: return "reciprocal";
  }
  return "?";
}

// b either matches a, or matches a with the leading dimension dropped.
bool row_broadcast(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != a.rank() - 1) return false;
  for (int i = 1; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i - 1)) return false;
  }
  return true;
}

double bin_fwd64(BinOp op, double x, double y) {
  switch (op) {
    case BinOp::kAdd: return x + y;
    case BinOp::kSub: return x - y;
    case BinOp::kMul: return x * y;
    case BinOp::kDiv: return x / y;
  }
  return 0.0;
}

double un_fwd64(UnOp op, double x) {
  switch (op) {
    case UnOp::kTanh: return std::tanh(x);
    case UnOp::kSigmoid:
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case UnOp::kExp: return std::exp(x);
    case UnOp::kLog: return std::log(x);
    case UnOp::kSoftplus: return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    case UnOp::kSqrt: return std::sqrt(x);
    case UnOp::kSquare: return x * x;
    case UnOp::kReciprocal: return 1.0 / x;
  }
  return 0.0;
}

void un_fwd32(UnOp op, const float* x, float* y, std::size_t n) {
  switch (op) {
    case UnOp::kTanh: kn::vtanh(x, y, n); return;
    case UnOp::kSigmoid: kn::vsigmoid(x, y, n); return;
    case UnOp::kExp: kn::vexp(x, y, n); return;
    case UnOp::kLog: kn::vlog(x, y, n); return;
    case UnOp::kSoftplus: kn::vsoftplus(x, y, n); return;
    case UnOp::kSqrt: kn::vsqrt(x, y, n); return;
    case UnOp::kSquare: kn::vmul(x, x, y, n); return;
    case UnOp::kReciprocal:
      for (std::size_t i = 0; i < n; ++i) y[i] = 1.0f / x[i];
      return;
  }
}

struct ConvDims {
  int batch, cin, h, w;
  int cout, kh, kw;
  int stride, pad, ho, wo;
  std::size_t ckk() const { return static_cast<std::size_t>(cin) * kh * kw; }
  std::size_t out_plane() const { return static_cast<std::size_t>(ho) * wo; }
  std::size_t in_plane() const { return static_cast<std::size_t>(h) * w; }
};

}  // namespace

Tape::Node& Tape::node_at(Var v) {
  check_arg(v.idx >= 0 && v.idx < num_nodes(), "Tape: invalid Var");
  return nodes_[static_cast<std::size_t>(v.idx)];
}

const Tape::Node& Tape::node_at(Var v) const {
  check_arg(v.idx >= 0 && v.idx < num_nodes(), "Tape: invalid Var");
  return nodes_[static_cast<std::size_t>(v.idx)];
}

Tensor& Tape::grad_mut(int idx) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (n.grad.numel() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = node_at(v);
  check_arg(grads_ready_, "Tape::grad: call backward() first");
  check_arg(n.requires_grad, "Tape::grad: node '" + n.op + "' does not require grad");
  return n.grad;
}

int Tape::first_nonfinite_node() const {
  for (int i = 0; i < num_nodes(); ++i) {
    if (!nodes_[static_cast<std::size_t>(i)].value.all_finite()) return i;
  }
  return -1;
}

Var Tape::leaf(Tensor t) {
  Node nd;
  nd.op = "leaf";
  nd.value = std::move(t);
  nd.requires_grad = nd.value.requires_grad;
  nd.is_leaf = true;
  nodes_.push_back(std::move(nd));
  return Var{num_nodes() - 1};
}

Var Tape::constant(Tensor t) {
  Node nd;
  nd.op = "const";
  nd.value = std::move(t);
  nd.value.requires_grad = false;
  nd.requires_grad = false;
  nd.is_leaf = true;
  nodes_.push_back(std::move(nd));
  return Var{num_nodes() - 1};
}

// Friend of Tape: shared machinery for building nodes.
struct TapeOps {
  using Node = Tape::Node;
  using Vals64 = Tape::Vals64;

  static int push(Tape& t, Node&& nd) {
    t.nodes_.push_back(std::move(nd));
    return t.num_nodes() - 1;
  }
  static Node& node(Tape& t, int i) { return t.nodes_[static_cast<std::size_t>(i)]; }
  static const Node& node(const Tape& t, int i) { return t.nodes_[static_cast<std::size_t>(i)]; }
  static bool needs(const Tape& t, int i) { return node(t, i).requires_grad; }
  static Tensor& gmut(Tape& t, int i) { return t.grad_mut(i); }
  static const Tensor& val(const Tape& t, int i) { return node(t, i).value; }

  // -------------------------------------------------------------------------
  static Var binary(Tape& t, BinOp op, Var a, Var b) {
    const Tensor& ta = t.value(a);
    const Tensor& tb = t.value(b);
    const bool bcast = !ta.same_shape(tb);
    if (bcast) {
      check_arg(row_broadcast(ta, tb),
                std::string(bin_name(op)) + ": shape mismatch " + ta.shape_str() + " vs " +
                    tb.shape_str());
    }
    const int n = ta.numel();
    const int cols = bcast ? tb.numel() : n;
    const int rows = bcast ? n / cols : 1;

    Node nd;
    nd.op = bin_name(op);
    nd.inputs = {a.idx, b.idx};
    nd.value = Tensor(ta.shape());
    {
      const float* pa = ta.data();
      const float* pb = tb.data();
      float* py = nd.value.data();
      for (int r = 0; r < (bcast ? rows : 1); ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        const std::size_t len = bcast ? static_cast<std::size_t>(cols)
                                      : static_cast<std::size_t>(n);
        switch (op) {
          case BinOp::kAdd: kn::vadd(pa + off, pb, py + off, len); break;
          case BinOp::kSub: kn::vsub(pa + off, pb, py + off, len); break;
          case BinOp::kMul: kn::vmul(pa + off, pb, py + off, len); break;
          case BinOp::kDiv: kn::vdiv(pa + off, pb, py + off, len); break;
        }
      }
    }
    nd.requires_grad = needs(t, a.idx) || needs(t, b.idx);
    const int ai = a.idx, bi = b.idx;
    if (nd.requires_grad) {
      nd.backward = [op, ai, bi, bcast, rows, cols](Tape& tp, int self) {
        const Tensor& g = node(tp, self).grad;
        const Tensor& va = val(tp, ai);
        const Tensor& vb = val(tp, bi);
        const Tensor& vy = node(tp, self).value;
        const int nn = va.numel();
        if (needs(tp, ai)) {
          Tensor& ga = gmut(tp, ai);
          switch (op) {
            case BinOp::kAdd:
            case BinOp::kSub:
              kn::vaxpy(1.0f, g.data(), ga.data(), static_cast<std::size_t>(nn));
              break;
            case BinOp::kMul:
              for (int i = 0; i < nn; ++i) ga[i] += g[i] * vb[bcast ? i % cols : i];
              break;
            case BinOp::kDiv:
              for (int i = 0; i < nn; ++i) ga[i] += g[i] / vb[bcast ? i % cols : i];
              break;
          }
        }
        if (needs(tp, bi)) {
          Tensor& gb = gmut(tp, bi);
          for (int i = 0; i < nn; ++i) {
            const int j = bcast ? i % cols : i;
            switch (op) {
              case BinOp::kAdd: gb[j] += g[i]; break;
              case BinOp::kSub: gb[j] -= g[i]; break;
              case BinOp::kMul: gb[j] += g[i] * va[i]; break;
              case BinOp::kDiv: gb[j] -= g[i] * vy[i] / vb[j]; break;
            }
          }
        }
        (void)rows;
      };
    }
    nd.fwd64 = [op, ai, bi, bcast, cols](const Tape&, Vals64& vals, int self) {
      const auto& xa = vals[static_cast<std::size_t>(ai)];
      const auto& xb = vals[static_cast<std::size_t>(bi)];
      auto& out = vals[static_cast<std::size_t>(self)];
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = bin_fwd64(op, xa[i], xb[bcast ? i % static_cast<std::size_t>(cols) : i]);
      }
    };
    return Var{push(t, std::move(nd))};
  }

  // -------------------------------------------------------------------------
  static Var unary(Tape& t, UnOp op, Var a) {
    const Tensor& ta = t.value(a);
    Node nd;
    nd.op = un_name(op);
    nd.inputs = {a.idx};
    nd.value = Tensor(ta.shape());
    un_fwd32(op, ta.data(), nd.value.data(), static_cast<std::size_t>(ta.numel()));
    nd.requires_grad = needs(t, a.idx);
    const int ai = a.idx;
    if (nd.requires_grad) {
      nd.backward = [op, ai](Tape& tp, int self) {
        if (!needs(tp, ai)) return;
        const Tensor& g = node(tp, self).grad;
        const Tensor& x = val(tp, ai);
        const Tensor& y = node(tp, self).value;
        Tensor& ga = gmut(tp, ai);
        const int n = x.numel();
        switch (op) {
          case UnOp::kTanh:
            for (int i = 0; i < n; ++i) ga[i] += g[i] * (1.0f - y[i] * y[i]);
            break;
          case UnOp::kSigmoid:
            for (int i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (1.0f - y[i]);
            break;
          case UnOp::kExp:
            kn::vfma_acc(g.data(), y.data(), ga.data(), static_cast<std::size_t>(n));
            break;
          case UnOp::kLog:
            for (int i = 0; i < n; ++i) ga[i] += g[i] / x[i];
            break;
          case UnOp::kSoftplus:
            for (int i = 0; i < n; ++i) {
              const float v = x[i];
              const float s = v >= 0 ? 1.0f / (1.0f + std::exp(-v))
                                     : std::exp(v) / (1.0f + std::exp(v));
              ga[i] += g[i] * s;
            }
            break;
          case UnOp::kSqrt:
            for (int i = 0; i < n; ++i) ga[i] += g[i] * 0.5f / y[i];
            break;
          case UnOp::kSquare:
            for (int i = 0; i < n; ++i) ga[i] += 2.0f * g[i] * x[i];
            break;
          case UnOp::kReciprocal:
            for (int i = 0; i < n; ++i) ga[i] -= g[i] * y[i] * y[i];
            break;
        }
      };
    }
    nd.fwd64 = [op, ai](const Tape&, Vals64& vals, int self) {
      const auto& x = vals[static_cast<std::size_t>(ai)];
      auto& out = vals[static_cast<std::size_t>(self)];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = un_fwd64(op, x[i]);
    };
    return Var{push(t, std::move(nd))};
  }
};

// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) { return TapeOps::binary(*this, BinOp::kAdd, a, b); }
Var Tape::sub(Var a, Var b) { return TapeOps::binary(*this, BinOp::kSub, a, b); }
Var Tape::mul(Var a, Var b) { return TapeOps::binary(*this, BinOp::kMul, a, b); }
Var Tape::div(Var a, Var b) { return TapeOps::binary(*this, BinOp::kDiv, a, b); }

Var Tape::tanh(Var a) { return TapeOps::unary(*this, UnOp::kTanh, a); }
Var Tape::sigmoid(Var a) { return TapeOps::unary(*this, UnOp::kSigmoid, a); }
Var Tape::exp(Var a) { return TapeOps::unary(*this, UnOp::kExp, a); }
Var Tape::log(Var a) { return TapeOps::unary(*this, UnOp::kLog, a); }
Var Tape::softplus(Var a) { return TapeOps::unary(*this, UnOp::kSoftplus, a); }
Var Tape::sqrt(Var a) { return TapeOps::unary(*this, UnOp::kSqrt, a); }
Var Tape::square(Var a) { return TapeOps::unary(*this, UnOp::kSquare, a); }
Var Tape::reciprocal(Var a) { return TapeOps::unary(*this, UnOp::kReciprocal, a); }

Var Tape::add_scalar(Var a, float c) {
  const Tensor& ta = value(a);
  Node nd;
  nd.op = "add_scalar";
  nd.inputs = {a.idx};
  nd.value = ta;
  nd.value.requires_grad = false;
  for (int i = 0; i < nd.value.numel(); ++i) nd.value[i] += c;
  nd.requires_grad = requires_grad(a);
  const int ai = a.idx;
  if (nd.requires_grad) {
    nd.backward = [ai](Tape& tp, int self) {
      if (!TapeOps::needs(tp, ai)) return;
      const Tensor& g = TapeOps::node(tp, self).grad;
      kn::vaxpy(1.0f, g.data(), TapeOps::gmut(tp, ai).data(),
                static_cast<std::size_t>(g.numel()));
    };
  }
  const double cd = c;
  nd.fwd64 = [ai, cd](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(ai)];
    auto& out = vals[static_cast<std::size_t>(self)];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + cd;
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::scale(Var a, float c) {
  const Tensor& ta = value(a);
  Node nd;
  nd.op = "scale";
  nd.inputs = {a.idx};
  nd.value = Tensor(ta.shape());
  kn::vscale(ta.data(), c, nd.value.data(), static_cast<std::size_t>(ta.numel()));
  nd.requires_grad = requires_grad(a);
  const int ai = a.idx;
  if (nd.requires_grad) {
    nd.backward = [ai, c](Tape& tp, int self) {
      if (!TapeOps::needs(tp, ai)) return;
      const Tensor& g = TapeOps::node(tp, self).grad;
      kn::vaxpy(c, g.data(), TapeOps::gmut(tp, ai).data(),
                static_cast<std::size_t>(g.numel()));
    };
  }
  const double cd = c;
  nd.fwd64 = [ai, cd](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(ai)];
    auto& out = vals[static_cast<std::size_t>(self)];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cd * x[i];
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check_arg(ta.rank() == 2 && tb.rank() == 2,
            "matmul: expects rank-2 operands, got " + ta.shape_str() + " x " + tb.shape_str());
  check_arg(ta.dim(1) == tb.dim(0),
            "matmul: inner dimension mismatch " + ta.shape_str() + " x " + tb.shape_str());
  const int m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Node nd;
  nd.op = "matmul";
  nd.inputs = {a.idx, b.idx};
  nd.value = Tensor({m, n});
  kn::matmul_nn(ta.data(), tb.data(), nd.value.data(), m, k, n, false);
  nd.requires_grad = requires_grad(a) || requires_grad(b);
  const int ai = a.idx, bi = b.idx;
  if (nd.requires_grad) {
    nd.backward = [ai, bi, m, k, n](Tape& tp, int self) {
      const Tensor& g = TapeOps::node(tp, self).grad;
      if (TapeOps::needs(tp, ai)) {
        // dA(m,k) += G(m,n) * B(k,n)^T
        kn::matmul_nt(g.data(), TapeOps::val(tp, bi).data(), TapeOps::gmut(tp, ai).data(),
                      m, n, k, true);
      }
      if (TapeOps::needs(tp, bi)) {
        // dB(k,n) += A(m,k)^T * G(m,n)
        kn::matmul_tn(TapeOps::val(tp, ai).data(), g.data(), TapeOps::gmut(tp, bi).data(),
                      k, m, n, true);
      }
    };
  }
  nd.fwd64 = [ai, bi, m, k, n](const Tape&, Vals64& vals, int self) {
    kr::matmul_nn<double>(vals[static_cast<std::size_t>(ai)].data(),
                          vals[static_cast<std::size_t>(bi)].data(),
                          vals[static_cast<std::size_t>(self)].data(), m, k, n, false);
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::sum(Var a) {
  const Tensor& ta = value(a);
  Node nd;
  nd.op = "sum";
  nd.inputs = {a.idx};
  nd.value = Tensor::scalar(static_cast<float>(kn::vsum(ta.data(), static_cast<std::size_t>(ta.numel()))));
  nd.requires_grad = requires_grad(a);
  const int ai = a.idx;
  if (nd.requires_grad) {
    nd.backward = [ai](Tape& tp, int self) {
      if (!TapeOps::needs(tp, ai)) return;
      const float g0 = TapeOps::node(tp, self).grad[0];
      Tensor& ga = TapeOps::gmut(tp, ai);
      for (int i = 0; i < ga.numel(); ++i) ga[i] += g0;
    };
  }
  nd.fwd64 = [ai](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(ai)];
    double s = 0.0;
    for (double v : x) s += v;
    vals[static_cast<std::size_t>(self)][0] = s;
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::mean(Var a) {
  const Tensor& ta = value(a);
  const int n = ta.numel();
  Node nd;
  nd.op = "mean";
  nd.inputs = {a.idx};
  nd.value = Tensor::scalar(
      static_cast<float>(kn::vsum(ta.data(), static_cast<std::size_t>(n)) / n));
  nd.requires_grad = requires_grad(a);
  const int ai = a.idx;
  if (nd.requires_grad) {
    nd.backward = [ai, n](Tape& tp, int self) {
      if (!TapeOps::needs(tp, ai)) return;
      const float g0 = TapeOps::node(tp, self).grad[0] / static_cast<float>(n);
      Tensor& ga = TapeOps::gmut(tp, ai);
      for (int i = 0; i < ga.numel(); ++i) ga[i] += g0;
    };
  }
  nd.fwd64 = [ai, n](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(ai)];
    double s = 0.0;
    for (double v : x) s += v;
    vals[static_cast<std::size_t>(self)][0] = s / n;
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::rowsum(Var a) {
  const Tensor& ta = value(a);
  check_arg(ta.rank() >= 2, "rowsum: expects rank >= 2, got " + ta.shape_str());
  const int rows = ta.dim(0);
  const int cols = ta.numel() / rows;
  Node nd;
  nd.op = "rowsum";
  nd.inputs = {a.idx};
  nd.value = Tensor({rows});
  for (int r = 0; r < rows; ++r) {
    nd.value[r] = static_cast<float>(
        kn::vsum(ta.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)));
  }
  nd.requires_grad = requires_grad(a);
  const int ai = a.idx;
  if (nd.requires_grad) {
    nd.backward = [ai, rows, cols](Tape& tp, int self) {
      if (!TapeOps::needs(tp, ai)) return;
      const Tensor& g = TapeOps::node(tp, self).grad;
      Tensor& ga = TapeOps::gmut(tp, ai);
      for (int r = 0; r < rows; ++r) {
        float* row = ga.data() + static_cast<std::size_t>(r) * cols;
        const float gr = g[r];
        for (int i = 0; i < cols; ++i) row[i] += gr;
      }
    };
  }
  nd.fwd64 = [ai, rows, cols](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(ai)];
    auto& out = vals[static_cast<std::size_t>(self)];
    for (int r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int i = 0; i < cols; ++i) s += x[static_cast<std::size_t>(r) * cols + i];
      out[static_cast<std::size_t>(r)] = s;
    }
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::concat(std::span<const Var> parts, int axis) {
  check_arg(!parts.empty(), "concat: empty input list");
  const Tensor& t0 = value(parts[0]);
  check_arg((t0.rank() == 1 && axis == 0) || (t0.rank() == 2 && (axis == 0 || axis == 1)),
            "concat: supports rank-1 axis 0 and rank-2 axis 0/1, got rank " +
                std::to_string(t0.rank()) + " axis " + std::to_string(axis));
  std::vector<int> idxs;
  std::vector<int> sizes;  // per-part size along axis
  int total = 0;
  for (const Var& p : parts) {
    const Tensor& tp = value(p);
    check_arg(tp.rank() == t0.rank(), "concat: rank mismatch");
    if (t0.rank() == 2) {
      check_arg(tp.dim(1 - axis) == t0.dim(1 - axis),
                "concat: shape mismatch " + tp.shape_str() + " vs " + t0.shape_str());
    }
    idxs.push_back(p.idx);
    sizes.push_back(tp.dim(axis));
    total += tp.dim(axis);
  }
  std::vector<int> out_shape = t0.shape();
  out_shape[static_cast<std::size_t>(axis)] = total;

  Node nd;
  nd.op = "concat";
  nd.inputs = idxs;
  nd.value = Tensor(out_shape);
  const int rows = (t0.rank() == 2 && axis == 1) ? t0.dim(0) : 1;
  {
    if (t0.rank() == 1 || axis == 0) {
      // contiguous stacking
      std::size_t off = 0;
      for (std::size_t p = 0; p < idxs.size(); ++p) {
        const Tensor& tp = nodes_[static_cast<std::size_t>(idxs[p])].value;
        std::memcpy(nd.value.data() + off, tp.data(), sizeof(float) * static_cast<std::size_t>(tp.numel()));
        off += static_cast<std::size_t>(tp.numel());
      }
    } else {
      for (int r = 0; r < rows; ++r) {
        std::size_t off = static_cast<std::size_t>(r) * total;
        for (std::size_t p = 0; p < idxs.size(); ++p) {
          const Tensor& tp = nodes_[static_cast<std::size_t>(idxs[p])].value;
          const int c = sizes[p];
          std::memcpy(nd.value.data() + off,
                      tp.data() + static_cast<std::size_t>(r) * c,
                      sizeof(float) * static_cast<std::size_t>(c));
          off += static_cast<std::size_t>(c);
        }
      }
    }
  }
  nd.requires_grad = false;
  for (int i : idxs) nd.requires_grad = nd.requires_grad || nodes_[static_cast<std::size_t>(i)].requires_grad;
  const int rank = t0.rank();
  if (nd.requires_grad) {
    nd.backward = [idxs, sizes, rows, total, axis, rank](Tape& tp, int self) {
      const Tensor& g = TapeOps::node(tp, self).grad;
      if (rank == 1 || axis == 0) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < idxs.size(); ++p) {
          const int n = TapeOps::val(tp, idxs[p]).numel();
          if (TapeOps::needs(tp, idxs[p])) {
            kn::vaxpy(1.0f, g.data() + off, TapeOps::gmut(tp, idxs[p]).data(),
                      static_cast<std::size_t>(n));
          }
          off += static_cast<std::size_t>(n);
        }
      } else {
        for (int r = 0; r < rows; ++r) {
          std::size_t off = static_cast<std::size_t>(r) * total;
          for (std::size_t p = 0; p < idxs.size(); ++p) {
            const int c = sizes[p];
            if (TapeOps::needs(tp, idxs[p])) {
              kn::vaxpy(1.0f, g.data() + off,
                        TapeOps::gmut(tp, idxs[p]).data() + static_cast<std::size_t>(r) * c,
                        static_cast<std::size_t>(c));
            }
            off += static_cast<std::size_t>(c);
          }
        }
      }
    };
  }
  nd.fwd64 = [idxs, sizes, rows, total, axis, rank](const Tape&, Vals64& vals, int self) {
    auto& out = vals[static_cast<std::size_t>(self)];
    if (rank == 1 || axis == 0) {
      std::size_t off = 0;
      for (std::size_t p = 0; p < idxs.size(); ++p) {
        const auto& x = vals[static_cast<std::size_t>(idxs[p])];
        for (std::size_t i = 0; i < x.size(); ++i) out[off + i] = x[i];
        off += x.size();
      }
    } else {
      for (int r = 0; r < rows; ++r) {
        std::size_t off = static_cast<std::size_t>(r) * total;
        for (std::size_t p = 0; p < idxs.size(); ++p) {
          const auto& x = vals[static_cast<std::size_t>(idxs[p])];
          const int c = sizes[p];
          for (int i = 0; i < c; ++i) out[off + static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(r) * c + i];
          off += static_cast<std::size_t>(c);
        }
      }
    }
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::slice(Var a, int axis, int start, int len) {
  const Tensor& ta = value(a);
  check_arg(ta.rank() == 1 || ta.rank() == 2, "slice: supports rank 1 or 2, got " + ta.shape_str());
  check_arg(axis >= 0 && axis < ta.rank(), "slice: bad axis " + std::to_string(axis));
  check_arg(start >= 0 && len > 0 && start + len <= ta.dim(axis),
            "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") out of bounds for " + ta.shape_str());
  std::vector<int> out_shape = ta.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  const int rows = ta.rank() == 2 ? ta.dim(0) : 1;
  const int cols = ta.rank() == 2 ? ta.dim(1) : ta.dim(0);

  Node nd;
  nd.op = "slice";
  nd.inputs = {a.idx};
  nd.value = Tensor(out_shape);
  if (ta.rank() == 1 || axis == 1) {
    const int r0 = 0, rn = rows;
    for (int r = r0; r < rn; ++r) {
      std::memcpy(nd.value.data() + static_cast<std::size_t>(r) * len,
                  ta.data() + static_cast<std::size_t>(r) * cols + start,
                  sizeof(float) * static_cast<std::size_t>(len));
    }
  } else {  // rank-2 axis 0: contiguous rows
    std::memcpy(nd.value.data(), ta.data() + static_cast<std::size_t>(start) * cols,
                sizeof(float) * static_cast<std::size_t>(len) * cols);
  }
  nd.requires_grad = requires_grad(a);
  const int ai = a.idx;
  const int rank = ta.rank();
  if (nd.requires_grad) {
    nd.backward = [ai, axis, start, len, rows, cols, rank](Tape& tp, int self) {
      if (!TapeOps::needs(tp, ai)) return;
      const Tensor& g = TapeOps::node(tp, self).grad;
      Tensor& ga = TapeOps::gmut(tp, ai);
      if (rank == 1 || axis == 1) {
        for (int r = 0; r < rows; ++r) {
          kn::vaxpy(1.0f, g.data() + static_cast<std::size_t>(r) * len,
                    ga.data() + static_cast<std::size_t>(r) * cols + start,
                    static_cast<std::size_t>(len));
        }
      } else {
        kn::vaxpy(1.0f, g.data(), ga.data() + static_cast<std::size_t>(start) * cols,
                  static_cast<std::size_t>(len) * cols);
      }
    };
  }
  nd.fwd64 = [ai, axis, start, len, rows, cols, rank](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(ai)];
    auto& out = vals[static_cast<std::size_t>(self)];
    if (rank == 1 || axis == 1) {
      for (int r = 0; r < rows; ++r) {
        for (int i = 0; i < len; ++i) {
          out[static_cast<std::size_t>(r) * len + i] =
              x[static_cast<std::size_t>(r) * cols + start + i];
        }
      }
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[static_cast<std::size_t>(start) * cols + i];
      }
    }
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& ta = value(a);
  Tensor out(std::move(shape), ta.vec());
  check_arg(out.numel() == ta.numel(),
            "reshape: element count mismatch " + ta.shape_str() + " -> " + out.shape_str());
  Node nd;
  nd.op = "reshape";
  nd.inputs = {a.idx};
  nd.value = std::move(out);
  nd.value.requires_grad = false;
  nd.requires_grad = requires_grad(a);
  const int ai = a.idx;
  if (nd.requires_grad) {
    nd.backward = [ai](Tape& tp, int self) {
      if (!TapeOps::needs(tp, ai)) return;
      const Tensor& g = TapeOps::node(tp, self).grad;
      kn::vaxpy(1.0f, g.data(), TapeOps::gmut(tp, ai).data(),
                static_cast<std::size_t>(g.numel()));
    };
  }
  nd.fwd64 = [ai](const Tape&, Vals64& vals, int self) {
    vals[static_cast<std::size_t>(self)] = vals[static_cast<std::size_t>(ai)];
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::expand_rows(Var a, int rows) {
  const Tensor& ta = value(a);
  check_arg(ta.rank() == 1, "expand_rows: expects rank-1 input, got " + ta.shape_str());
  check_arg(rows > 0, "expand_rows: rows must be positive");
  const int d = ta.dim(0);
  Node nd;
  nd.op = "expand_rows";
  nd.inputs = {a.idx};
  nd.value = Tensor({rows, d});
  for (int r = 0; r < rows; ++r) {
    std::memcpy(nd.value.data() + static_cast<std::size_t>(r) * d, ta.data(),
                sizeof(float) * static_cast<std::size_t>(d));
  }
  nd.requires_grad = requires_grad(a);
  const int ai = a.idx;
  if (nd.requires_grad) {
    nd.backward = [ai, rows, d](Tape& tp, int self) {
      if (!TapeOps::needs(tp, ai)) return;
      const Tensor& g = TapeOps::node(tp, self).grad;
      Tensor& ga = TapeOps::gmut(tp, ai);
      for (int r = 0; r < rows; ++r) {
        kn::vaxpy(1.0f, g.data() + static_cast<std::size_t>(r) * d, ga.data(),
                  static_cast<std::size_t>(d));
      }
    };
  }
  nd.fwd64 = [ai, rows, d](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(ai)];
    auto& out = vals[static_cast<std::size_t>(self)];
    for (int r = 0; r < rows; ++r) {
      for (int i = 0; i < d; ++i) out[static_cast<std::size_t>(r) * d + i] = x[static_cast<std::size_t>(i)];
    }
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

// ---------------------------------------------------------------------------
// convolution

Var Tape::conv2d(Var xv, Var wv, int stride, int pad) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  check_arg(x.rank() == 4, "conv2d: input must be (B,C,H,W), got " + x.shape_str());
  check_arg(w.rank() == 4, "conv2d: weight must be (F,C,kh,kw), got " + w.shape_str());
  check_arg(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvDims d{};
  d.batch = x.dim(0); d.cin = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  d.cout = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.pad = pad;
  check_arg(w.dim(1) == d.cin,
            "conv2d: channel mismatch input " + x.shape_str() + " vs weight " + w.shape_str());
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  check_arg(d.ho > 0 && d.wo > 0, "conv2d: kernel larger than padded input");

  Node nd;
  nd.op = "conv2d";
  nd.inputs = {xv.idx, wv.idx};
  nd.value = Tensor({d.batch, d.cout, d.ho, d.wo});
  {
    std::vector<float> col(d.ckk() * d.out_plane());
    const std::size_t in_sz = static_cast<std::size_t>(d.cin) * d.in_plane();
    const std::size_t out_sz = static_cast<std::size_t>(d.cout) * d.out_plane();
    for (int b = 0; b < d.batch; ++b) {
      kr::im2col<float>(x.data() + b * in_sz, d.cin, d.h, d.w, d.kh, d.kw, d.stride, d.pad,
                        d.ho, d.wo, col.data());
      kn::matmul_nn(w.data(), col.data(), nd.value.data() + b * out_sz,
                    d.cout, static_cast<int>(d.ckk()), static_cast<int>(d.out_plane()), false);
    }
  }
  nd.requires_grad = requires_grad(xv) || requires_grad(wv);
  const int xi = xv.idx, wi = wv.idx;
  if (nd.requires_grad) {
    nd.backward = [xi, wi, d](Tape& tp, int self) {
      const Tensor& g = TapeOps::node(tp, self).grad;
      const Tensor& x = TapeOps::val(tp, xi);
      const Tensor& w = TapeOps::val(tp, wi);
      const std::size_t in_sz = static_cast<std::size_t>(d.cin) * d.in_plane();
      const std::size_t out_sz = static_cast<std::size_t>(d.cout) * d.out_plane();
      std::vector<float> col(d.ckk() * d.out_plane());
      const bool nx = TapeOps::needs(tp, xi);
      const bool nw = TapeOps::needs(tp, wi);
      for (int b = 0; b < d.batch; ++b) {
        if (nx) {
          // dcol = W^T(ckk,F) * G_b(F,howo), then fold back to the image
          kn::matmul_tn(w.data(), g.data() + b * out_sz, col.data(),
                        static_cast<int>(d.ckk()), d.cout, static_cast<int>(d.out_plane()), false);
          kr::col2im<float>(col.data(), d.cin, d.h, d.w, d.kh, d.kw, d.stride, d.pad, d.ho, d.wo,
                            TapeOps::gmut(tp, xi).data() + b * in_sz);
        }
        if (nw) {
          kr::im2col<float>(x.data() + b * in_sz, d.cin, d.h, d.w, d.kh, d.kw, d.stride, d.pad,
                            d.ho, d.wo, col.data());
          // dW(F,ckk) += G_b(F,howo) * col^T
          kn::matmul_nt(g.data() + b * out_sz, col.data(), TapeOps::gmut(tp, wi).data(),
                        d.cout, static_cast<int>(d.out_plane()), static_cast<int>(d.ckk()), true);
        }
      }
    };
  }
  nd.fwd64 = [xi, wi, d](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(xi)];
    const auto& w = vals[static_cast<std::size_t>(wi)];
    auto& out = vals[static_cast<std::size_t>(self)];
    std::vector<double> col(d.ckk() * d.out_plane());
    const std::size_t in_sz = static_cast<std::size_t>(d.cin) * d.in_plane();
    const std::size_t out_sz = static_cast<std::size_t>(d.cout) * d.out_plane();
    for (int b = 0; b < d.batch; ++b) {
      kr::im2col<double>(x.data() + b * in_sz, d.cin, d.h, d.w, d.kh, d.kw, d.stride, d.pad,
                         d.ho, d.wo, col.data());
      kr::matmul_nn<double>(w.data(), col.data(), out.data() + b * out_sz,
                            d.cout, static_cast<int>(d.ckk()), static_cast<int>(d.out_plane()),
                            false);
    }
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::conv_transpose2d(Var xv, Var wv, int stride, int pad) {
  const Tensor& x = value(xv);
  const Tensor& w = value(wv);
  check_arg(x.rank() == 4, "conv_transpose2d: input must be (B,C,H,W), got " + x.shape_str());
  check_arg(w.rank() == 4, "conv_transpose2d: weight must be (C,F,kh,kw), got " + w.shape_str());
  check_arg(stride >= 1 && pad >= 0, "conv_transpose2d: bad stride/pad");
  check_arg(w.dim(0) == x.dim(1), "conv_transpose2d: channel mismatch input " + x.shape_str() +
                                      " vs weight " + w.shape_str());
  // The matching conv maps (F, Ht, Wt) -> (C, H, W); this op is its input-grad.
  ConvDims d{};
  d.batch = x.dim(0);
  d.cout = x.dim(1);           // conv output channels == our input channels
  d.cin = w.dim(1);            // conv input channels == our output channels
  d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.pad = pad;
  d.ho = x.dim(2); d.wo = x.dim(3);
  d.h = (x.dim(2) - 1) * stride - 2 * pad + d.kh;
  d.w = (x.dim(3) - 1) * stride - 2 * pad + d.kw;
  check_arg(d.h > 0 && d.w > 0, "conv_transpose2d: empty output");

  Node nd;
  nd.op = "conv_transpose2d";
  nd.inputs = {xv.idx, wv.idx};
  nd.value = Tensor({d.batch, d.cin, d.h, d.w});
  {
    std::vector<float> col(d.ckk() * d.out_plane());
    const std::size_t in_sz = static_cast<std::size_t>(d.cout) * d.out_plane();   // our input
    const std::size_t out_sz = static_cast<std::size_t>(d.cin) * d.in_plane();    // our output
    for (int b = 0; b < d.batch; ++b) {
      kn::matmul_tn(w.data(), x.data() + b * in_sz, col.data(),
                    static_cast<int>(d.ckk()), d.cout, static_cast<int>(d.out_plane()), false);
      kr::col2im<float>(col.data(), d.cin, d.h, d.w, d.kh, d.kw, d.stride, d.pad, d.ho, d.wo,
                        nd.value.data() + b * out_sz);
    }
  }
  nd.requires_grad = requires_grad(xv) || requires_grad(wv);
  const int xi = xv.idx, wi = wv.idx;
  if (nd.requires_grad) {
    nd.backward = [xi, wi, d](Tape& tp, int self) {
      const Tensor& g = TapeOps::node(tp, self).grad;  // (B, cin_of_conv, H, W) image role
      const Tensor& x = TapeOps::val(tp, xi);
      const Tensor& w = TapeOps::val(tp, wi);
      std::vector<float> col(d.ckk() * d.out_plane());
      const std::size_t in_sz = static_cast<std::size_t>(d.cout) * d.out_plane();
      const std::size_t out_sz = static_cast<std::size_t>(d.cin) * d.in_plane();
      const bool nx = TapeOps::needs(tp, xi);
      const bool nw = TapeOps::needs(tp, wi);
      for (int b = 0; b < d.batch; ++b) {
        if (!nx && !nw) break;
        kr::im2col<float>(g.data() + b * out_sz, d.cin, d.h, d.w, d.kh, d.kw, d.stride, d.pad,
                          d.ho, d.wo, col.data());
        if (nx) {
          // dX_b(cout,howo) += Wflat(cout,ckk) * col
          kn::matmul_nn(w.data(), col.data(), TapeOps::gmut(tp, xi).data() + b * in_sz,
                        d.cout, static_cast<int>(d.ckk()), static_cast<int>(d.out_plane()), true);
        }
        if (nw) {
          // dW(cout,ckk) += X_b(cout,howo) * col^T
          kn::matmul_nt(x.data() + b * in_sz, col.data(), TapeOps::gmut(tp, wi).data(),
                        d.cout, static_cast<int>(d.out_plane()), static_cast<int>(d.ckk()), true);
        }
      }
    };
  }
  nd.fwd64 = [xi, wi, d](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(xi)];
    const auto& w = vals[static_cast<std::size_t>(wi)];
    auto& out = vals[static_cast<std::size_t>(self)];
    std::vector<double> col(d.ckk() * d.out_plane());
    const std::size_t in_sz = static_cast<std::size_t>(d.cout) * d.out_plane();
    const std::size_t out_sz = static_cast<std::size_t>(d.cin) * d.in_plane();
    std::fill(out.begin(), out.end(), 0.0);
    for (int b = 0; b < d.batch; ++b) {
      kr::matmul_tn<double>(w.data(), x.data() + b * in_sz, col.data(),
                            static_cast<int>(d.ckk()), d.cout, static_cast<int>(d.out_plane()),
                            false);
      kr::col2im<double>(col.data(), d.cin, d.h, d.w, d.kh, d.kw, d.stride, d.pad, d.ho, d.wo,
                         out.data() + b * out_sz);
    }
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

Var Tape::add_channel_bias(Var xv, Var bv) {
  const Tensor& x = value(xv);
  const Tensor& b = value(bv);
  check_arg(x.rank() == 4, "add_channel_bias: input must be (B,C,H,W), got " + x.shape_str());
  check_arg(b.rank() == 1 && b.dim(0) == x.dim(1),
            "add_channel_bias: bias shape " + b.shape_str() + " does not match channels of " +
                x.shape_str());
  const int batch = x.dim(0), c = x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  Node nd;
  nd.op = "add_channel_bias";
  nd.inputs = {xv.idx, bv.idx};
  nd.value = Tensor(x.shape());
  for (int bi_ = 0; bi_ < batch; ++bi_) {
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t off = (static_cast<std::size_t>(bi_) * c + ci) * plane;
      const float bc = b[ci];
      for (int i = 0; i < plane; ++i) nd.value[static_cast<int>(off) + i] = x[static_cast<int>(off) + i] + bc;
    }
  }
  nd.requires_grad = requires_grad(xv) || requires_grad(bv);
  const int xi = xv.idx, bi = bv.idx;
  if (nd.requires_grad) {
    nd.backward = [xi, bi, batch, c, plane](Tape& tp, int self) {
      const Tensor& g = TapeOps::node(tp, self).grad;
      if (TapeOps::needs(tp, xi)) {
        kn::vaxpy(1.0f, g.data(), TapeOps::gmut(tp, xi).data(),
                  static_cast<std::size_t>(g.numel()));
      }
      if (TapeOps::needs(tp, bi)) {
        Tensor& gb = TapeOps::gmut(tp, bi);
        for (int bb = 0; bb < batch; ++bb) {
          for (int ci = 0; ci < c; ++ci) {
            const std::size_t off = (static_cast<std::size_t>(bb) * c + ci) * plane;
            gb[ci] += static_cast<float>(
                kn::vsum(g.data() + off, static_cast<std::size_t>(plane)));
          }
        }
      }
    };
  }
  nd.fwd64 = [xi, bi, batch, c, plane](const Tape&, Vals64& vals, int self) {
    const auto& x = vals[static_cast<std::size_t>(xi)];
    const auto& b = vals[static_cast<std::size_t>(bi)];
    auto& out = vals[static_cast<std::size_t>(self)];
    for (int bb = 0; bb < batch; ++bb) {
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t off = (static_cast<std::size_t>(bb) * c + ci) * plane;
        for (int i = 0; i < plane; ++i) out[off + i] = x[off + i] + b[static_cast<std::size_t>(ci)];
      }
    }
  };
  return Var{TapeOps::push(*this, std::move(nd))};
}

// ---------------------------------------------------------------------------

void Tape::backward(Var out) {
  const Tensor& ov = value(out);
  check_arg(ov.numel() == 1, "backward: output must be scalar, got shape " + ov.shape_str());
  for (auto& n : nodes_) n.grad = Tensor();
  grads_ready_ = true;
  // Pre-size gradients of every grad-requiring node so unused parameters
  // read back as exact zeros.
  for (auto& n : nodes_) {
    if (n.requires_grad) n.grad = Tensor(n.value.shape());
  }
  if (!node_at(out).requires_grad) return;
  grad_mut(out.idx)[0] = 1.0f;
  for (int i = out.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward) continue;
    n.backward(*this, i);
  }
}

double Tape::replay_f64(Var out) const { return replay_f64(out, Var{-1}, 0, 0.0); }

double Tape::replay_f64(Var out, Var leaf, int coord, double override_value) const {
  const Node& on = node_at(out);
  check_arg(on.value.numel() == 1, "replay_f64: output must be scalar");
  Vals64 vals(nodes_.size());
  for (int i = 0; i <= out.idx; ++i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    vals[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(n.value.numel()));
    if (n.is_leaf) {
      auto& v = vals[static_cast<std::size_t>(i)];
      for (int j = 0; j < n.value.numel(); ++j) v[static_cast<std::size_t>(j)] = n.value[j];
      if (i == leaf.idx) v[static_cast<std::size_t>(coord)] = override_value;
    } else {
      check_arg(static_cast<bool>(n.fwd64), "replay_f64: op '" + n.op + "' lacks f64 forward");
      n.fwd64(*this, vals, i);
    }
  }
  return vals[static_cast<std::size_t>(out.idx)][0];
}

}  // namespace mrssm
