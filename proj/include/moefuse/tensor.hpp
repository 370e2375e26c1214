// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "moefuse/error.hpp"
#include "moefuse/rng.hpp"

namespace moefuse {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

/// One node of the computation graph. Holds the forward value and, once an
/// op with a differentiable input produced it, the parent handles and the
/// backward rule. The graph is acyclic by construction; backward() visits
/// each node exactly once in reverse topological order.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated lazily, same extent as value
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats participating in a reverse-mode
/// gradient graph. Value semantics: copying a Tensor copies the handle,
/// not the storage. Tensors are immutable after an op produced them;
/// leaves may be mutated in place (initialization, optimizer updates).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only
  bool is_matrix() const;

  const std::vector<double>& values() const;
  /// Mutable access for leaf tensors (init, optimizer). Mutating a tensor
  /// that already fed an op invalidates cached forward values; callers
  /// only do this between graph constructions.
  std::vector<double>& values();

  double item() const;  // numel()==1

  bool requires_grad() const;
  void set_requires_grad(bool rg);
  bool has_grad() const;
  const std::vector<double>& grad() const;
  std::vector<double>& grad_mut();
  void zero_grad();

  const char* op() const;

  /// Reverse-mode sweep from a scalar. Accumulates into .grad of every
  /// requires_grad tensor reachable from this one; repeated calls without
  /// zeroing accumulate.
  void backward() const;

  /// True when both tensors share the same underlying node.
  bool is(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> n);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// While a NoGradGuard is alive on a thread, ops produce plain values with
/// no graph, which keeps inference cheap.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// --- Operations ---------------------------------------------------------
// Shapes are checked on every op; only last-dim concat and scalar
// broadcast (numel()==1 second operand of mul_scalar) are supported.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x: [n,m], bias: m elements ([m] or [1,m]); adds bias to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double a);
/// Scalar broadcast: s must have numel()==1; gradients flow to both.
Tensor mul_scalar(const Tensor& x, const Tensor& s);
/// 1/x for a one-element tensor.
Tensor reciprocal(const Tensor& x);
Tensor relu(const Tensor& x);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);
/// Softmax over the last dimension, computed with max subtraction.
Tensor softmax(const Tensor& x);
/// Row-wise layer normalization with learned gain/shift (m elements each).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
/// Last-dim concat of matrices with equal row counts.
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor row(const Tensor& x, std::size_t i);
/// Stacks k tensors of m elements each into a [k,m] matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);
/// One element by flat index, as a one-element tensor.
Tensor select(const Tensor& x, std::size_t flat_index);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& pred, const Tensor& target);
/// -ln(p[t] + 1e-12); p must be an already-normalized probability vector.
Tensor cross_entropy(const Tensor& probs, std::size_t target_index);
/// Squared coefficient of variation (population stddev / mean)^2.
Tensor cv_squared(const Tensor& x);

}  // namespace moefuse
