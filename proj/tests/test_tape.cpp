// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mrssm/grad_check.hpp"
#include "mrssm/rng.hpp"
#include "mrssm/tape.hpp"

using mrssm::GraphFn;
using mrssm::Tape;
using mrssm::Tensor;
using mrssm::Var;

namespace {

Tensor with_grad(Tensor t) {
  t.requires_grad = true;
  return t;
}

}  // namespace

TEST_CASE("square of a scalar") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0f));
  Var y = t.square(x);
  CHECK(t.value(y)[0] == doctest::Approx(9.0));
}

TEST_CASE("matmul by the identity") {
  mrssm::Rng rng(3, "tape");
  Tape t;
  Var eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Tensor a = rng.normal_tensor({2, 2});
  Var av = t.leaf(a);
  Var y = t.matmul(eye, av);
  for (int i = 0; i < 4; ++i) CHECK(t.value(y)[i] == a[i]);
}

TEST_CASE("conv2d all-ones 3x3 kernel on all-ones input gives 9 at the center") {
  Tape t;
  Var x = t.constant(Tensor::full({1, 1, 16, 16}, 1.0f));
  Var w = t.constant(Tensor::full({1, 1, 3, 3}, 1.0f));
  Var y = t.conv2d(x, w, /*stride=*/1, /*pad=*/1);
  const Tensor& v = t.value(y);
  CHECK(v.shape() == std::vector<int>{1, 1, 16, 16});
  CHECK(v[8 * 16 + 8] == doctest::Approx(9.0));
  // corners see only 4 contributing taps under zero padding
  CHECK(v[0] == doctest::Approx(4.0));
}

TEST_CASE("backward of x^2 at 3 is 6") {
  Tape t;
  Var x = t.leaf(with_grad(Tensor::scalar(3.0f)));
  Var y = t.square(x);
  t.backward(y);
  CHECK(t.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar outputs") {
  Tape t;
  Var x = t.leaf(with_grad(Tensor({2}, {1, 2})));
  Var y = t.scale(x, 2.0f);
  CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
}

TEST_CASE("gradient of a disconnected parameter is zero") {
  Tape t;
  Var x = t.leaf(with_grad(Tensor::scalar(2.0f)));
  Var unused = t.leaf(with_grad(Tensor({3}, {1, 2, 3})));
  Var y = t.square(x);
  t.backward(y);
  const Tensor& g = t.grad(unused);
  for (int i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0f);
}

TEST_CASE("d(sum(tanh(Wx)))/dW matches finite differences") {
  mrssm::Rng rng(11, "tape");
  Tensor w = rng.normal_tensor({4, 4});
  Tensor x = rng.normal_tensor({4, 1});
  GraphFn fn = [](Tape& t, std::span<const Var> leaves) {
    return t.sum(t.tanh(t.matmul(leaves[0], leaves[1])));
  };
  const Tensor point[] = {w, x};
  CHECK(mrssm::grad_check(fn, point, 1e-3) < 1e-4);
}

TEST_CASE("grad_check edge cases") {
  SUBCASE("linear function is exact") {
    GraphFn fn = [](Tape& t, std::span<const Var> leaves) {
      return t.sum(t.scale(leaves[0], 2.5f));
    };
    const Tensor point[] = {Tensor({3}, {1, -2, 0.5f})};
    CHECK(mrssm::grad_check(fn, point, 1e-3) < 1e-6);
  }
  SUBCASE("constant function has zero gradient both ways") {
    GraphFn fn = [](Tape& t, std::span<const Var> leaves) {
      (void)leaves;
      return t.scalar_const(4.0f);
    };
    const Tensor point[] = {Tensor({2}, {1, 2})};
    CHECK(mrssm::grad_check(fn, point, 1e-3) == doctest::Approx(0.0));
  }
  SUBCASE("composite conv -> tanh -> mean") {
    mrssm::Rng rng(5, "tape");
    Tensor x = rng.normal_tensor({1, 2, 6, 6});
    Tensor w = rng.normal_tensor({3, 2, 3, 3}, 0.0, 0.5);
    Tensor b = rng.normal_tensor({3}, 0.0, 0.1);
    GraphFn fn = [](Tape& t, std::span<const Var> leaves) {
      Var y = t.conv2d(leaves[0], leaves[1], 2, 1);
      y = t.add_channel_bias(y, leaves[2]);
      return t.mean(t.tanh(y));
    };
    const Tensor point[] = {x, w, b};
    CHECK(mrssm::grad_check(fn, point, 1e-3) < 1e-4);
  }
}

TEST_CASE("every primitive matches central finite differences at random points") {
  mrssm::Rng rng(17, "tape-prims");
  // Each lambda builds a scalar function of its leaves exercising one primitive.
  struct Prim {
    const char* name;
    int n_leaves;
    GraphFn fn;
    double lo, hi;
  };
  const std::vector<Prim> prims = {
      {"add", 2, [](Tape& t, std::span<const Var> l) { return t.sum(t.add(l[0], l[1])); }, -2, 2},
      {"sub", 2, [](Tape& t, std::span<const Var> l) { return t.sum(t.mul(t.sub(l[0], l[1]), l[1])); }, -2, 2},
      {"mul", 2, [](Tape& t, std::span<const Var> l) { return t.sum(t.mul(l[0], l[1])); }, -2, 2},
      {"div", 2, [](Tape& t, std::span<const Var> l) { return t.sum(t.div(l[0], l[1])); }, 0.5, 2.5},
      {"tanh", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.tanh(l[0])); }, -2, 2},
      {"sigmoid", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.sigmoid(l[0])); }, -2, 2},
      {"exp", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.exp(l[0])); }, -1.5, 1.5},
      {"log", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.log(l[0])); }, 0.5, 3.0},
      {"softplus", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.softplus(l[0])); }, -2, 2},
      {"sqrt", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.sqrt(l[0])); }, 0.5, 3.0},
      {"square", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.square(l[0])); }, -2, 2},
      {"reciprocal", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.reciprocal(l[0])); }, 0.5, 2.5},
      {"matmul", 2, [](Tape& t, std::span<const Var> l) { return t.sum(t.matmul(l[0], l[1])); }, -1, 1},
      {"mean", 1, [](Tape& t, std::span<const Var> l) { return t.mean(t.square(l[0])); }, -2, 2},
      {"rowsum", 1, [](Tape& t, std::span<const Var> l) { return t.sum(t.square(t.rowsum(l[0]))); }, -1, 1},
      {"concat", 2,
       [](Tape& t, std::span<const Var> l) {
         const Var parts[] = {l[0], l[1]};
         return t.sum(t.square(t.concat(parts, 1)));
       },
       -1, 1},
      {"slice", 1,
       [](Tape& t, std::span<const Var> l) { return t.sum(t.square(t.slice(l[0], 1, 1, 2))); }, -1, 1},
      {"expand_rows", 1,
       [](Tape& t, std::span<const Var> l) {
         return t.sum(t.square(t.expand_rows(t.rowsum(l[0]), 3)));
       },
       -1, 1},
      {"broadcast_add", 2,
       [](Tape& t, std::span<const Var> l) {
         return t.sum(t.square(t.add(l[0], t.rowsum(l[1]))));
       },
       -1, 1},
  };

  // >= 100 random points per primitive: 4x4 leaves over several draws
  for (const auto& p : prims) {
    double worst = 0.0;
    for (int rep = 0; rep < 7; ++rep) {
      std::vector<Tensor> point;
      for (int i = 0; i < p.n_leaves; ++i) {
        Tensor t({4, 4});
        for (int j = 0; j < t.numel(); ++j) t[j] = static_cast<float>(rng.uniform(p.lo, p.hi));
        point.push_back(std::move(t));
      }
      worst = std::max(worst, mrssm::grad_check(p.fn, point, 1e-3));
    }
    CAPTURE(p.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("conv primitives match finite differences") {
  mrssm::Rng rng(23, "tape-conv");
  SUBCASE("conv2d stride 2") {
    Tensor x = rng.normal_tensor({2, 2, 5, 5});
    Tensor w = rng.normal_tensor({3, 2, 3, 3}, 0.0, 0.5);
    GraphFn fn = [](Tape& t, std::span<const Var> l) {
      return t.sum(t.square(t.conv2d(l[0], l[1], 2, 1)));
    };
    const Tensor point[] = {x, w};
    CHECK(mrssm::grad_check(fn, point, 1e-3) < 1e-4);
  }
  SUBCASE("conv_transpose2d stride 2") {
    Tensor x = rng.normal_tensor({2, 3, 2, 2});
    Tensor w = rng.normal_tensor({3, 2, 4, 4}, 0.0, 0.5);
    GraphFn fn = [](Tape& t, std::span<const Var> l) {
      return t.sum(t.square(t.conv_transpose2d(l[0], l[1], 2, 1)));
    };
    const Tensor point[] = {x, w};
    CHECK(mrssm::grad_check(fn, point, 1e-3) < 1e-4);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <convT(u,w), v> == <u, conv(v,w)> for all u, v
  mrssm::Rng rng(29, "tape-adj");
  Tensor u = rng.normal_tensor({1, 4, 3, 3});
  Tensor w = rng.normal_tensor({4, 2, 4, 4});
  Tensor v = rng.normal_tensor({1, 2, 6, 6});

  Tape t;
  Var uv = t.constant(u), wv = t.constant(w), vv = t.constant(v);
  Var tu = t.conv_transpose2d(uv, wv, 2, 1);  // (1,2,6,6)
  Var cv = t.conv2d(vv, wv, 2, 1);            // (1,4,3,3)
  REQUIRE(t.value(tu).shape() == v.shape());
  REQUIRE(t.value(cv).shape() == u.shape());
  const double lhs = t.value(t.sum(t.mul(tu, vv)))[0];
  const double rhs = t.value(t.sum(t.mul(cv, uv)))[0];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("forward is pure: re-execution is bit-identical") {
  mrssm::Rng rng(31, "tape-pure");
  Tensor x = rng.normal_tensor({2, 3, 8, 8});
  Tensor w = rng.normal_tensor({4, 3, 3, 3});
  auto run = [&]() {
    Tape t;
    Var y = t.conv2d(t.constant(x), t.constant(w), 2, 1);
    Var z = t.mean(t.tanh(y));
    return t.value(z)[0];
  };
  const float a = run();
  const float b = run();
  CHECK(std::memcmp(&a, &b, sizeof(float)) == 0);
}

TEST_CASE("backward is linear: grad of sum equals sum of grads") {
  mrssm::Rng rng(37, "tape-lin");
  Tensor x = rng.normal_tensor({5});
  auto grad_of = [&](int which) {
    // which: 0 -> f+g, 1 -> f, 2 -> g
    Tape t;
    Tensor xr = x;
    xr.requires_grad = true;
    Var xv = t.leaf(xr);
    Var f = t.sum(t.square(xv));
    Var g = t.sum(t.tanh(xv));
    Var out = which == 0 ? t.add(f, g) : (which == 1 ? f : g);
    t.backward(out);
    return t.grad(xv);
  };
  const Tensor gs = grad_of(0), gf = grad_of(1), gg = grad_of(2);
  for (int i = 0; i < 5; ++i) {
    CHECK(gs[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-6));
  }
}

TEST_CASE("shape mismatches identify the offending operation") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({2, 2}));
  try {
    t.add(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  try {
    t.matmul(a, a);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(t.conv2d(a, b, 1, 0), std::invalid_argument);
}

TEST_CASE("first_nonfinite_node pinpoints bad values") {
  Tape t;
  Var ok = t.constant(Tensor({2}, {1, 2}));
  CHECK(t.first_nonfinite_node() == -1);
  Var bad = t.log(t.constant(Tensor({2}, {-1.0f, 1.0f})));
  (void)ok;
  const int idx = t.first_nonfinite_node();
  CHECK(idx == bad.idx);
  CHECK(t.op_name(idx) == "log");
}
