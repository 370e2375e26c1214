// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "moefuse/kernels.hpp"

namespace moefuse {

using detail::TensorNode;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

thread_local bool t_grad_enabled = true;

std::size_t shape_numel(const Shape& s) {
  if (s.empty()) throw ShapeError("tensor shape must have at least one extent");
  std::size_t n = 1;
  for (std::size_t d : s) {
    if (d == 0)
      throw ShapeError("tensor extents must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

std::shared_ptr<TensorNode> make_node(Shape shape, const char* op) {
  auto n = std::make_shared<TensorNode>();
  n->value.assign(shape_numel(shape), 0.0);
  n->shape = std::move(shape);
  n->op = op;
  return n;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined())
    throw ContractError(std::string(op) + ": undefined tensor operand");
}

Tensor finish(std::shared_ptr<TensorNode> n, const std::vector<Tensor>& parents,
              std::function<void(TensorNode&)> fn) {
  bool any = false;
  if (t_grad_enabled)
    for (const auto& p : parents) any = any || p.node()->requires_grad;
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
  }
  return Tensor::wrap(std::move(n));
}

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
constexpr double kLogEps = 1e-12;

}  // namespace

// --- Tensor basics -------------------------------------------------------

Tensor Tensor::wrap(std::shared_ptr<TensorNode> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf");
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf");
  std::fill(n->value.begin(), n->value.end(), v);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  std::size_t n = shape_numel(shape);
  if (n != data.size())
    throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                     std::to_string(n) + " values, got " +
                     std::to_string(data.size()));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = rng.normal(0.0, stddev);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::numel() const {
  require_defined(*this, "numel");
  return node_->numel();
}

bool Tensor::is_matrix() const { return defined() && node_->shape.size() == 2; }

std::size_t Tensor::rows() const {
  if (!is_matrix())
    throw ShapeError("rows: tensor is not 2-D, shape " +
                     (defined() ? shape_str(node_->shape) : "undefined"));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix())
    throw ShapeError("cols: tensor is not 2-D, shape " +
                     (defined() ? shape_str(node_->shape) : "undefined"));
  return node_->shape[1];
}

const std::vector<double>& Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

std::vector<double>& Tensor::values() {
  require_defined(*this, "values");
  return node_->value;
}

double Tensor::item() const {
  require_defined(*this, "item");
  if (node_->numel() != 1)
    throw ContractError("item: tensor has " + std::to_string(node_->numel()) +
                        " elements");
  return node_->value[0];
}

bool Tensor::requires_grad() const {
  return defined() && node_->requires_grad;
}

void Tensor::set_requires_grad(bool rg) {
  require_defined(*this, "set_requires_grad");
  node_->requires_grad = rg;
  if (!rg) node_->grad.clear();
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  require_defined(*this, "grad");
  if (node_->grad.empty())
    throw ContractError("grad: no gradient accumulated for this tensor");
  return node_->grad;
}

std::vector<double>& Tensor::grad_mut() {
  require_defined(*this, "grad");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  if (!node_->grad.empty())
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

const char* Tensor::op() const {
  require_defined(*this, "op");
  return node_->op;
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (node_->numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(node_->shape));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS: parents land before their consumers, so
  // reverse iteration propagates each node's complete gradient exactly once.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second)
        stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Non-leaf grads are scratch for this sweep; leaf grads accumulate, so
  // repeated backward calls without zeroing add up on parameters.
  for (TensorNode* n : order)
    if (n->backward_fn) {
      n->ensure_grad();
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

bool grad_enabled() { return t_grad_enabled; }

// --- Operations ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node({m, n}, "matmul");
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* cv = out->value.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      kernels::axpy(cv + i * n, av[i * k + p], bv + p * n, n);
  return finish(std::move(out), {a, b}, [m, k, n](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    const double* dy = self.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
          pa.grad[i * k + p] +=
              kernels::dot(dy + i * n, pb.value.data() + p * n, n);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
          kernels::axpy(pb.grad.data() + p * n, pa.value[i * k + p],
                        dy + i * n, n);
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  if (!x.is_matrix())
    throw ShapeError("transpose: expected 2-D tensor, got " +
                     shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  auto out = make_node({n, m}, "transpose");
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->value[j * m + i] = xv[i * n + j];
  return finish(std::move(out), {x}, [m, n](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        p.grad[i * n + j] += self.grad[j * m + i];
  });
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = make_node(a.shape(), "add");
  kernels::add(out->value.data(), a.values().data(), b.values().data(),
               out->value.size());
  return finish(std::move(out), {a, b}, [](TensorNode& self) {
    for (int side = 0; side < 2; ++side) {
      TensorNode& p = *self.parents[side];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      kernels::axpy(p.grad.data(), 1.0, self.grad.data(), self.grad.size());
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = make_node(a.shape(), "sub");
  kernels::sub(out->value.data(), a.values().data(), b.values().data(),
               out->value.size());
  return finish(std::move(out), {a, b}, [](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      kernels::axpy(pa.grad.data(), 1.0, self.grad.data(), self.grad.size());
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      kernels::axpy(pb.grad.data(), -1.0, self.grad.data(), self.grad.size());
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = make_node(a.shape(), "mul");
  kernels::mul(out->value.data(), a.values().data(), b.values().data(),
               out->value.size());
  return finish(std::move(out), {a, b}, [](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    const auto& dy = self.grad;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < dy.size(); ++i)
        pa.grad[i] += dy[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < dy.size(); ++i)
        pb.grad[i] += dy[i] * pa.value[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  if (!x.is_matrix())
    throw ShapeError("add_bias: expected 2-D input, got " +
                     shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n)
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                     " does not match row width of " + shape_str(x.shape()));
  auto out = make_node({m, n}, "add_bias");
  const double* xv = x.values().data();
  const double* bv = bias.values().data();
  for (std::size_t i = 0; i < m; ++i)
    kernels::add(out->value.data() + i * n, xv + i * n, bv, n);
  return finish(std::move(out), {x, bias}, [m, n](TensorNode& self) {
    TensorNode& px = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      kernels::axpy(px.grad.data(), 1.0, self.grad.data(), m * n);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        kernels::axpy(pb.grad.data(), 1.0, self.grad.data() + i * n, n);
    }
  });
}

Tensor scale(const Tensor& x, double a) {
  require_defined(x, "scale");
  auto out = make_node(x.shape(), "scale");
  kernels::scale(out->value.data(), x.values().data(), a, out->value.size());
  return finish(std::move(out), {x}, [a](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    kernels::axpy(p.grad.data(), a, self.grad.data(), self.grad.size());
  });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
  require_defined(x, "mul_scalar");
  require_defined(s, "mul_scalar");
  if (s.numel() != 1)
    throw ShapeError("mul_scalar: scalar operand has shape " +
                     shape_str(s.shape()));
  auto out = make_node(x.shape(), "mul_scalar");
  kernels::scale(out->value.data(), x.values().data(), s.values()[0],
                 out->value.size());
  return finish(std::move(out), {x, s}, [](TensorNode& self) {
    TensorNode& px = *self.parents[0];
    TensorNode& ps = *self.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      kernels::axpy(px.grad.data(), ps.value[0], self.grad.data(),
                    self.grad.size());
    }
    if (ps.requires_grad) {
      ps.ensure_grad();
      ps.grad[0] +=
          kernels::dot(self.grad.data(), px.value.data(), self.grad.size());
    }
  });
}

Tensor reciprocal(const Tensor& x) {
  require_defined(x, "reciprocal");
  if (x.numel() != 1)
    throw ShapeError("reciprocal: expected one element, got " +
                     shape_str(x.shape()));
  auto out = make_node(x.shape(), "reciprocal");
  out->value[0] = 1.0 / x.values()[0];
  return finish(std::move(out), {x}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double y = self.value[0];
    p.grad[0] += -self.grad[0] * y * y;
  });
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  auto out = make_node(x.shape(), "relu");
  kernels::relu(out->value.data(), x.values().data(), out->value.size());
  return finish(std::move(out), {x}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    kernels::relu_backward(p.grad.data(), self.grad.data(), p.value.data(),
                           self.grad.size());
  });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  auto out = make_node(x.shape(), "gelu");
  const auto& xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    double v = xv[i];
    double u = kGeluC0 * (v + kGeluC1 * v * v * v);
    out->value[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  return finish(std::move(out), {x}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double v = p.value[i];
      double u = kGeluC0 * (v + kGeluC1 * v * v * v);
      double t = std::tanh(u);
      double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * v * v);
      double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      p.grad[i] += self.grad[i] * d;
    }
  });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  const Shape& s = x.shape();
  const std::size_t last = s.back();
  const std::size_t slices = x.numel() / last;
  auto out = make_node(s, "softmax");
  const double* xv = x.values().data();
  double* yv = out->value.data();
  for (std::size_t r = 0; r < slices; ++r) {
    const double* xi = xv + r * last;
    double* yi = yv + r * last;
    double mx = kernels::max_value(xi, last);
    for (std::size_t j = 0; j < last; ++j) yi[j] = std::exp(xi[j] - mx);
    double total = kernels::sum(yi, last);
    kernels::scale(yi, yi, 1.0 / total, last);
  }
  return finish(std::move(out), {x}, [last, slices](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t r = 0; r < slices; ++r) {
      const double* y = self.value.data() + r * last;
      const double* dy = self.grad.data() + r * last;
      double* dx = p.grad.data() + r * last;
      double dotv = kernels::dot(dy, y, last);
      for (std::size_t j = 0; j < last; ++j) dx[j] += y[j] * (dy[j] - dotv);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_defined(x, "layer_norm");
  require_defined(gamma, "layer_norm");
  require_defined(beta, "layer_norm");
  if (!x.is_matrix())
    throw ShapeError("layer_norm: expected 2-D input, got " +
                     shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n)
    throw ShapeError("layer_norm: gain/shift " + shape_str(gamma.shape()) +
                     "/" + shape_str(beta.shape()) + " do not match row width of " +
                     shape_str(x.shape()));
  auto out = make_node({m, n}, "layer_norm");
  std::vector<double> row_mean(m), row_inv_std(m);
  const double* xv = x.values().data();
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = xv + i * n;
    double mu = kernels::sum(xi, n) / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = xi[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + eps);
    row_mean[i] = mu;
    row_inv_std[i] = inv;
    double* yi = out->value.data() + i * n;
    for (std::size_t j = 0; j < n; ++j)
      yi[j] = (xi[j] - mu) * inv * gv[j] + bv[j];
  }
  return finish(
      std::move(out), {x, gamma, beta},
      [m, n, row_mean = std::move(row_mean),
       row_inv_std = std::move(row_inv_std)](TensorNode& self) {
        TensorNode& px = *self.parents[0];
        TensorNode& pg = *self.parents[1];
        TensorNode& pb = *self.parents[2];
        std::vector<double> xhat(n), dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* xi = px.value.data() + i * n;
          const double* dy = self.grad.data() + i * n;
          double inv = row_inv_std[i];
          for (std::size_t j = 0; j < n; ++j)
            xhat[j] = (xi[j] - row_mean[i]) * inv;
          if (pg.requires_grad) {
            pg.ensure_grad();
            for (std::size_t j = 0; j < n; ++j)
              pg.grad[j] += dy[j] * xhat[j];
          }
          if (pb.requires_grad) {
            pb.ensure_grad();
            kernels::axpy(pb.grad.data(), 1.0, dy, n);
          }
          if (px.requires_grad) {
            px.ensure_grad();
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = dy[j] * pg.value[j];
              mean_dxhat += dxhat[j];
              mean_dxhat_xhat += dxhat[j] * xhat[j];
            }
            mean_dxhat /= static_cast<double>(n);
            mean_dxhat_xhat /= static_cast<double>(n);
            double* dx = px.grad.data() + i * n;
            for (std::size_t j = 0; j < n; ++j)
              dx[j] += inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
          }
        }
      });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat: no operands");
  for (const auto& p : parts) require_defined(p, "concat");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (!p.is_matrix() || p.rows() != m)
      throw ShapeError("concat: row counts disagree, " +
                       shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    total += p.cols();
  }
  auto out = make_node({m, total}, "concat");
  std::vector<std::size_t> offsets(parts.size());
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    offsets[k] = off;
    const std::size_t w = parts[k].cols();
    const double* src = parts[k].values().data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(src + i * w, src + (i + 1) * w,
                out->value.data() + i * total + off);
    off += w;
  }
  return finish(std::move(out), parts,
                [m, total, offsets](TensorNode& self) {
                  for (std::size_t k = 0; k < self.parents.size(); ++k) {
                    TensorNode& p = *self.parents[k];
                    if (!p.requires_grad) continue;
                    p.ensure_grad();
                    const std::size_t w = p.shape[1];
                    for (std::size_t i = 0; i < m; ++i)
                      kernels::axpy(p.grad.data() + i * w, 1.0,
                                    self.grad.data() + i * total + offsets[k],
                                    w);
                  }
                });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  require_defined(x, "slice_cols");
  if (!x.is_matrix())
    throw ShapeError("slice_cols: expected 2-D input, got " +
                     shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  if (len == 0 || start + len > n)
    throw IndexError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of " +
                     shape_str(x.shape()));
  auto out = make_node({m, len}, "slice_cols");
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy(xv + i * n + start, xv + i * n + start + len,
              out->value.data() + i * len);
  return finish(std::move(out), {x}, [m, n, start, len](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      kernels::axpy(p.grad.data() + i * n + start, 1.0,
                    self.grad.data() + i * len, len);
  });
}

Tensor row(const Tensor& x, std::size_t i) {
  require_defined(x, "row");
  if (!x.is_matrix())
    throw ShapeError("row: expected 2-D input, got " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  if (i >= m)
    throw IndexError("row: index " + std::to_string(i) + " out of " +
                     shape_str(x.shape()));
  auto out = make_node({1, n}, "row");
  const double* xv = x.values().data();
  std::copy(xv + i * n, xv + (i + 1) * n, out->value.data());
  return finish(std::move(out), {x}, [i, n](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    kernels::axpy(p.grad.data() + i * n, 1.0, self.grad.data(), n);
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: no operands");
  for (const auto& r : rows) require_defined(r, "stack_rows");
  const std::size_t n = rows[0].numel();
  for (const auto& r : rows)
    if (r.numel() != n)
      throw ShapeError("stack_rows: element counts disagree, " +
                       shape_str(rows[0].shape()) + " vs " +
                       shape_str(r.shape()));
  const std::size_t k = rows.size();
  auto out = make_node({k, n}, "stack_rows");
  for (std::size_t r = 0; r < k; ++r)
    std::copy(rows[r].values().begin(), rows[r].values().end(),
              out->value.data() + r * n);
  return finish(std::move(out), rows, [n](TensorNode& self) {
    for (std::size_t r = 0; r < self.parents.size(); ++r) {
      TensorNode& p = *self.parents[r];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      kernels::axpy(p.grad.data(), 1.0, self.grad.data() + r * n, n);
    }
  });
}

Tensor select(const Tensor& x, std::size_t flat_index) {
  require_defined(x, "select");
  if (flat_index >= x.numel())
    throw IndexError("select: index " + std::to_string(flat_index) +
                     " out of " + std::to_string(x.numel()) + " elements");
  auto out = make_node({1}, "select");
  out->value[0] = x.values()[flat_index];
  return finish(std::move(out), {x}, [flat_index](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    p.grad[flat_index] += self.grad[0];
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  auto out = make_node({1}, "sum");
  out->value[0] = kernels::sum(x.values().data(), x.numel());
  return finish(std::move(out), {x}, [](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = self.grad[0];
    for (auto& d : p.grad) d += g;
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  auto out = make_node({1}, "mean");
  const std::size_t n = x.numel();
  out->value[0] = kernels::sum(x.values().data(), n) / static_cast<double>(n);
  return finish(std::move(out), {x}, [n](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = self.grad[0] / static_cast<double>(n);
    for (auto& d : p.grad) d += g;
  });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse");
  const std::size_t n = pred.numel();
  auto out = make_node({1}, "mse");
  const double* pv = pred.values().data();
  const double* tv = target.values().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = pv[i] - tv[i];
    acc += d * d;
  }
  out->value[0] = acc / static_cast<double>(n);
  return finish(std::move(out), {pred, target}, [n](TensorNode& self) {
    TensorNode& pp = *self.parents[0];
    TensorNode& pt = *self.parents[1];
    double g = self.grad[0] * 2.0 / static_cast<double>(n);
    if (pp.requires_grad) {
      pp.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        pp.grad[i] += g * (pp.value[i] - pt.value[i]);
    }
    if (pt.requires_grad) {
      pt.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        pt.grad[i] -= g * (pp.value[i] - pt.value[i]);
    }
  });
}

Tensor cross_entropy(const Tensor& probs, std::size_t target_index) {
  require_defined(probs, "cross_entropy");
  const Shape& s = probs.shape();
  if (s.back() != probs.numel())
    throw ShapeError("cross_entropy: expected a probability vector, got " +
                     shape_str(s));
  if (target_index >= probs.numel())
    throw IndexError("cross_entropy: target index " +
                     std::to_string(target_index) + " out of " +
                     std::to_string(probs.numel()) + " classes");
  auto out = make_node({1}, "cross_entropy");
  out->value[0] = -std::log(probs.values()[target_index] + kLogEps);
  return finish(std::move(out), {probs}, [target_index](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    p.grad[target_index] +=
        -self.grad[0] / (p.value[target_index] + kLogEps);
  });
}

Tensor cv_squared(const Tensor& x) {
  require_defined(x, "cv_squared");
  const std::size_t n = x.numel();
  const double* xv = x.values().data();
  double mu = kernels::sum(xv, n) / static_cast<double>(n);
  if (mu == 0.0) throw ContractError("cv_squared: mean is zero");
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = xv[i] - mu;
    var += d * d;
  }
  var /= static_cast<double>(n);
  auto out = make_node({1}, "cv_squared");
  out->value[0] = var / (mu * mu);
  return finish(std::move(out), {x}, [n, mu, var](TensorNode& self) {
    TensorNode& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    double g = self.grad[0];
    double c = 2.0 / (static_cast<double>(n) * mu * mu);
    for (std::size_t i = 0; i < n; ++i)
      p.grad[i] += g * c * ((p.value[i] - mu) - var / mu);
  });
}

}  // namespace moefuse
