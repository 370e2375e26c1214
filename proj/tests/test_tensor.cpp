// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "moefuse/tensor.hpp"
#include "testutil.hpp"

using namespace moefuse;
using testutil::finite_diff_check;

namespace {

Tensor const_weights(const Shape& shape, Rng& rng) {
  std::vector<double> w(Tensor::zeros(shape).numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(shape, std::move(w), false);
}

/// FD-checks dL/dx for loss = sum(w .* f(x)) with constant w.
void check_unary_op(const char* name, const std::function<Tensor(const Tensor&)>& f,
                    Shape shape, Rng& rng, double abs_tol = 1e-6,
                    double rel_tol = 1e-4, double input_scale = 1.0,
                    double min_abs = 0.0) {
  CAPTURE(name);
  auto data = testutil::random_vector(rng, Tensor::zeros(shape).numel(),
                                      input_scale);
  if (min_abs > 0.0)
    for (auto& v : data)
      if (std::fabs(v) < min_abs) v = v < 0 ? v - min_abs : v + min_abs;
  Tensor x = Tensor::from_data(shape, data, true);
  Tensor out = f(x);
  Tensor w = const_weights(out.shape(), rng);
  Tensor loss = sum(mul(out, w));
  loss.backward();
  auto analytic = x.grad();
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return sum(mul(f(x), w)).item();
  };
  auto r = finite_diff_check(x, loss_fn, analytic, 1e-5, abs_tol, rel_tol);
  CHECK_MESSAGE(r.ok, name, ": ", r.detail);
}

}  // namespace

// --- matmul --------------------------------------------------------------

TEST_CASE("matmul forward") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, a).values() == std::vector<double>{1, 2, 3, 4});

  Tensor r = Tensor::from_data({1, 2}, {1, 2});
  Tensor c = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(r, c).values() == std::vector<double>{11});

  CHECK_THROWS_AS(matmul(r, r), ShapeError);
  try {
    matmul(r, r);
  } catch (const ShapeError& e) {
    // the message names both shapes
    CHECK(std::string(e.what()).find("[1x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  Tensor a = Tensor::from_data({3, 4}, testutil::random_vector(rng, 12), true);
  Tensor b = Tensor::from_data({4, 2}, testutil::random_vector(rng, 8), true);
  Tensor loss = sum(matmul(a, b));
  loss.backward();
  auto ga = a.grad();
  auto gb = b.grad();
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return sum(matmul(a, b)).item();
  };
  CHECK(finite_diff_check(a, loss_fn, ga, 1e-5, 1e-9, 1e-6).ok);
  CHECK(finite_diff_check(b, loss_fn, gb, 1e-5, 1e-9, 1e-6).ok);
}

// --- softmax -------------------------------------------------------------

TEST_CASE("softmax values") {
  Tensor u = softmax(Tensor::from_data({4}, {0, 0, 0, 0}));
  for (double p : u.values()) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

  Tensor hot = softmax(Tensor::from_data({2}, {1000.0, 0.0}));
  CHECK(hot.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hot.values()[1] == doctest::Approx(0.0).epsilon(1e-12));
  for (double p : hot.values()) CHECK(std::isfinite(p));

  // Independent high-precision oracle: long double exp / sum(exp).
  Tensor s = softmax(Tensor::from_data({3}, {2, 1, 0}));
  long double e[3] = {expl(2.0L), expl(1.0L), expl(0.0L)};
  long double tot = e[0] + e[1] + e[2];
  for (int i = 0; i < 3; ++i)
    CHECK(std::fabs(s.values()[i] - static_cast<double>(e[i] / tot)) < 1e-12);
  // Frozen values from the oracle above.
  CHECK(s.values()[0] == doctest::Approx(0.6652409557748219).epsilon(1e-12));
  CHECK(s.values()[1] == doctest::Approx(0.2447284710547977).epsilon(1e-12));
  CHECK(s.values()[2] == doctest::Approx(0.0900305731703804).epsilon(1e-12));
}

TEST_CASE("softmax properties") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = testutil::random_vector(rng, 8, 3.0);
    Tensor p = softmax(Tensor::from_data({2, 4}, logits));
    const auto& v = p.values();
    for (int r = 0; r < 2; ++r) {
      double total = v[r * 4] + v[r * 4 + 1] + v[r * 4 + 2] + v[r * 4 + 3];
      CHECK(std::fabs(total - 1.0) < 1e-12);
      for (int j = 0; j < 4; ++j) CHECK(v[r * 4 + j] >= 0.0);
    }
    // Shift invariance: adding a constant to all logits changes nothing.
    double c = rng.uniform(-50.0, 50.0);
    auto shifted = logits;
    for (auto& x : shifted) x += c;
    Tensor q = softmax(Tensor::from_data({2, 4}, shifted));
    for (std::size_t i = 0; i < v.size(); ++i)
      CHECK(std::fabs(v[i] - q.values()[i]) < 1e-12);
  }
}

// --- elementwise suite ---------------------------------------------------

TEST_CASE("elementwise values") {
  Tensor a = Tensor::from_data({2}, {1, 2});
  Tensor b = Tensor::from_data({2}, {3, 5});
  CHECK(add(a, b).values() == std::vector<double>{4, 7});
  CHECK(sub(a, b).values() == std::vector<double>{-2, -3});
  CHECK(mul(a, b).values() == std::vector<double>{3, 10});
  CHECK(scale(a, 2.0).values() == std::vector<double>{2, 4});
  CHECK_THROWS_AS(add(a, Tensor::from_data({3}, {1, 2, 3})), ShapeError);

  CHECK(mse(a, a).item() == 0.0);
  CHECK(mse(Tensor::from_data({2}, {0, 0}), Tensor::from_data({2}, {1, 1}))
            .item() == 1.0);

  std::vector<double> onehot(16, 0.0);
  onehot[5] = 1.0;
  CHECK(std::fabs(cross_entropy(Tensor::from_data({16}, onehot), 5).item()) <
        1e-9);
  std::vector<double> uniform(16, 1.0 / 16.0);
  // Oracle: -ln(1/16) = ln 16; the 1e-12 log epsilon shifts it by ~1.6e-11.
  CHECK(std::fabs(cross_entropy(Tensor::from_data({16}, uniform), 3).item() -
                  2.772588722239781) < 1e-9);
  CHECK_THROWS_AS(cross_entropy(Tensor::from_data({16}, uniform), 16),
                  IndexError);
}

TEST_CASE("concat and slicing") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {5, 6});
  Tensor c = concat({a, b});
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.values() == std::vector<double>{1, 2, 5, 3, 4, 6});
  CHECK(slice_cols(c, 2, 1).values() == std::vector<double>{5, 6});
  CHECK(row(c, 1).values() == std::vector<double>{3, 4, 6});
  CHECK_THROWS_AS(concat({a, Tensor::from_data({1, 1}, {0})}), ShapeError);
  CHECK_THROWS_AS(slice_cols(c, 2, 2), IndexError);
  CHECK_THROWS_AS(row(c, 2), IndexError);

  Tensor s = stack_rows({Tensor::from_data({1, 2}, {1, 2}),
                         Tensor::from_data({1, 2}, {3, 4})});
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s.values() == std::vector<double>{1, 2, 3, 4});

  CHECK(select(c, 4).item() == 4.0);
  CHECK_THROWS_AS(select(c, 6), IndexError);
}

// --- backward ------------------------------------------------------------

TEST_CASE("backward basics") {
  Tensor x = Tensor::from_data({2, 3}, {1, -2, 3, 4, -5, 6}, true);
  sum(x).backward();
  CHECK(x.grad() == std::vector<double>(6, 1.0));

  // loss = mse(w*x, y) on scalars: grad(w) = 2x(wx - y)
  double xv = 1.7, yv = 0.3, wv = -0.8;
  Tensor w = Tensor::scalar(wv, true);
  Tensor loss = mse(mul_scalar(Tensor::scalar(xv), w), Tensor::scalar(yv));
  loss.backward();
  CHECK(w.grad()[0] ==
        doctest::Approx(2.0 * xv * (wv * xv - yv)).epsilon(1e-12));

  CHECK_THROWS_AS(x.backward(), ContractError);  // non-scalar loss
}

TEST_CASE("backward accumulates across calls and fan-out") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tensor loss = sum(x);
  loss.backward();
  loss.backward();
  CHECK(x.grad() == std::vector<double>(3, 2.0));

  // Fan-out: x feeds two consumers; contributions must sum.
  Tensor y = Tensor::from_data({3}, {1, 1, 1}, true);
  Tensor a = scale(y, 2.0);
  Tensor b = mul(y, y);
  sum(add(a, b)).backward();
  // d/dy (2y + y^2) = 2 + 2y = 4 at y=1
  CHECK(y.grad() == std::vector<double>(3, 4.0));
}

TEST_CASE("requires_grad=false never accumulates") {
  Tensor x = Tensor::from_data({2}, {1, 2}, false);
  Tensor w = Tensor::from_data({2}, {3, 4}, true);
  sum(mul(x, w)).backward();
  CHECK(!x.has_grad());
  CHECK(w.grad() == std::vector<double>{1, 2});
}

TEST_CASE("no-grad guard suppresses graph construction") {
  Tensor w = Tensor::from_data({2}, {3, 4}, true);
  NoGradGuard ng;
  Tensor y = mul(w, w);
  CHECK(!y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("two-layer network gradients match finite differences") {
  Rng rng(23);
  // ReLU net; inputs kept away from the kink so h=1e-5 cannot cross it.
  Tensor x = Tensor::from_data({1, 4}, {0.9, -1.3, 0.7, 1.8});
  Tensor w1 = Tensor::from_data({4, 5}, testutil::random_vector(rng, 20), true);
  Tensor b1 = Tensor::from_data({1, 5}, testutil::random_vector(rng, 5), true);
  Tensor w2 = Tensor::from_data({5, 2}, testutil::random_vector(rng, 10), true);
  Tensor b2 = Tensor::from_data({1, 2}, testutil::random_vector(rng, 2), true);
  Tensor target = Tensor::from_data({1, 2}, {0.3, -0.7});

  auto forward = [&]() {
    return mse(add_bias(matmul(relu(add_bias(matmul(x, w1), b1)), w2), b2),
               target);
  };
  // Margin guard: preactivations must be clear of zero.
  {
    NoGradGuard ng;
    Tensor pre = add_bias(matmul(x, w1), b1);
    for (double v : pre.values()) CHECK(std::fabs(v) > 1e-2);
  }
  Tensor loss = forward();
  loss.backward();
  auto loss_fn = [&]() {
    NoGradGuard ng;
    return forward().item();
  };
  for (Tensor* p : {&w1, &b1, &w2, &b2}) {
    auto r = finite_diff_check(*p, loss_fn, p->grad(), 1e-5, 1e-6, 1e-4);
    CHECK_MESSAGE(r.ok, r.detail);
  }
}

// --- per-op finite-difference sweep --------------------------------------

TEST_CASE("gradient check: every differentiable op") {
  Rng rng(31);
  check_unary_op("relu", [](const Tensor& t) { return relu(t); }, {3, 4}, rng,
                 1e-6, 1e-4, 1.0, 0.1);
  check_unary_op("gelu", [](const Tensor& t) { return gelu(t); }, {3, 4}, rng,
                 1e-6, 1e-3);
  check_unary_op("softmax", [](const Tensor& t) { return softmax(t); }, {3, 4},
                 rng);
  check_unary_op("transpose", [](const Tensor& t) { return transpose(t); },
                 {3, 4}, rng);
  check_unary_op("scale", [](const Tensor& t) { return scale(t, -2.3); },
                 {3, 4}, rng);
  check_unary_op("sum", [](const Tensor& t) { return sum(t); }, {3, 4}, rng);
  check_unary_op("mean", [](const Tensor& t) { return mean(t); }, {3, 4}, rng);
  check_unary_op("slice_cols",
                 [](const Tensor& t) { return slice_cols(t, 1, 2); }, {3, 4},
                 rng);
  check_unary_op("row", [](const Tensor& t) { return row(t, 2); }, {3, 4},
                 rng);
  check_unary_op("select", [](const Tensor& t) { return select(t, 5); },
                 {3, 4}, rng);
  check_unary_op("cross_entropy",
                 [](const Tensor& t) {
                   return cross_entropy(softmax(slice_cols(t, 0, 4)), 2);
                 },
                 {1, 4}, rng);
  check_unary_op("cv_squared",
                 [](const Tensor& t) { return cv_squared(t); }, {6}, rng, 1e-6,
                 1e-4, 1.0, 0.5);
  check_unary_op("layer_norm",
                 [](const Tensor& t) {
                   Tensor g = Tensor::from_data({4}, {1.1, 0.9, 1.2, 0.8});
                   Tensor b = Tensor::from_data({4}, {0.1, -0.2, 0.3, 0.0});
                   return layer_norm(t, g, b);
                 },
                 {3, 4}, rng);
  check_unary_op("reciprocal",
                 [](const Tensor& t) { return reciprocal(sum(mul(t, t))); },
                 {3}, rng, 1e-6, 1e-4, 1.0, 0.3);

  // Binary ops: check both operands.
  for (int side = 0; side < 2; ++side) {
    Tensor other = Tensor::from_data({2, 3}, testutil::random_vector(rng, 6));
    auto f = [side, other](const Tensor& t) {
      Tensor a = side == 0 ? t : other;
      Tensor b = side == 0 ? other : t;
      return concat({add(a, b), sub(a, b), mul(a, b)});
    };
    check_unary_op(side == 0 ? "binary lhs" : "binary rhs", f, {2, 3}, rng);
  }
  check_unary_op("add_bias x",
                 [](const Tensor& t) {
                   Tensor b = Tensor::from_data({3}, {0.5, -0.5, 0.25});
                   return add_bias(t, b);
                 },
                 {2, 3}, rng);
  check_unary_op("add_bias b",
                 [](const Tensor& t) {
                   Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
                   return add_bias(x, t);
                 },
                 {3}, rng);
  check_unary_op("mul_scalar x",
                 [](const Tensor& t) {
                   return mul_scalar(t, Tensor::scalar(1.3));
                 },
                 {2, 3}, rng);
  check_unary_op("mul_scalar s",
                 [](const Tensor& t) {
                   Tensor x = Tensor::from_data({2, 2}, {1, -2, 3, 4});
                   return mul_scalar(x, sum(t));
                 },
                 {1}, rng);
  check_unary_op("mse pred",
                 [](const Tensor& t) {
                   Tensor target = Tensor::from_data({2, 2}, {1, 0, -1, 2});
                   return mse(t, target);
                 },
                 {2, 2}, rng);
  check_unary_op("stack_rows",
                 [](const Tensor& t) {
                   Tensor fixed = Tensor::from_data({1, 4}, {1, 2, 3, 4});
                   return stack_rows({row(t, 0), fixed, row(t, 1)});
                 },
                 {2, 4}, rng);
}

TEST_CASE("cv_squared values") {
  CHECK(cv_squared(Tensor::from_data({4}, {2, 2, 2, 2})).item() == 0.0);
  // importance [1, 0]: mean 0.5, population stddev 0.5 -> (0.5/0.5)^2 = 1
  CHECK(cv_squared(Tensor::from_data({2}, {1, 0})).item() ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(cv_squared(Tensor::from_data({2}, {1, -1})), ContractError);
}

TEST_CASE("shape and contract errors") {
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(layer_norm(Tensor::from_data({2, 2}, {1, 2, 3, 4}),
                             Tensor::from_data({3}, {1, 1, 1}),
                             Tensor::from_data({3}, {0, 0, 0})),
                  ShapeError);
  CHECK_THROWS_AS(mul_scalar(Tensor::from_data({2}, {1, 2}),
                             Tensor::from_data({2}, {1, 2})),
                  ShapeError);
}
