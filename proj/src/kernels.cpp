// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string_view>

#include "moefuse/error.hpp"

namespace moefuse::kernels {

namespace ref {

void axpy(double* y, double a, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void add(double* out, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(double* out, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(double* out, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(double* out, const double* x, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

double sum(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double max_value(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

double sq_norm(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

void relu(double* out, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(double* dx, const double* dy, const double* x,
                   std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

void adam_step(double* p, double* m, double* v, const double* g,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bias1, double bias2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    double mhat = m[i] * bias1;
    double vhat = v[i] * bias2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace ref

namespace {

struct Table {
  void (*axpy)(double*, double, const double*, std::size_t);
  double (*dot)(const double*, const double*, std::size_t);
  void (*add)(double*, const double*, const double*, std::size_t);
  void (*sub)(double*, const double*, const double*, std::size_t);
  void (*mul)(double*, const double*, const double*, std::size_t);
  void (*scale)(double*, const double*, double, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*max_value)(const double*, std::size_t);
  double (*sq_norm)(const double*, std::size_t);
  void (*relu)(double*, const double*, std::size_t);
  void (*relu_backward)(double*, const double*, const double*, std::size_t);
  void (*adam_step)(double*, double*, double*, const double*, std::size_t,
                    double, double, double, double, double, double);
};

constexpr Table kRefTable = {
    ref::axpy, ref::dot,       ref::add,     ref::sub,
    ref::mul,  ref::scale,     ref::sum,     ref::max_value,
    ref::sq_norm, ref::relu, ref::relu_backward, ref::adam_step};

#if defined(MOEFUSE_HAVE_AVX2_TU)
constexpr Table kAvx2Table = {
    avx2::axpy, avx2::dot,       avx2::add,     avx2::sub,
    avx2::mul,  avx2::scale,     avx2::sum,     avx2::max_value,
    avx2::sq_norm, avx2::relu, avx2::relu_backward, avx2::adam_step};
#endif

bool cpu_has_avx2() {
#if defined(MOEFUSE_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend pick_default() {
  const char* env = std::getenv("MOEFUSE_KERNELS");
  if (env != nullptr) {
    std::string_view v(env);
    if (v == "ref") return Backend::Ref;
    if (v == "avx2") {
      if (cpu_has_avx2()) return Backend::Avx2;
      // Requested backend unavailable; fall through to auto.
    }
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Ref;
}

std::atomic<const Table*> g_table{nullptr};
std::atomic<Backend> g_backend{Backend::Ref};

const Table* table_for(Backend b) {
#if defined(MOEFUSE_HAVE_AVX2_TU)
  if (b == Backend::Avx2) return &kAvx2Table;
#else
  (void)b;
#endif
  return &kRefTable;
}

const Table& active() {
  const Table* t = g_table.load(std::memory_order_acquire);
  if (t == nullptr) {
    Backend b = pick_default();
    g_backend.store(b, std::memory_order_relaxed);
    t = table_for(b);
    g_table.store(t, std::memory_order_release);
  }
  return *t;
}

}  // namespace

Backend active_backend() {
  active();
  return g_backend.load(std::memory_order_relaxed);
}

const char* backend_name(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "ref";
}

bool avx2_supported() { return cpu_has_avx2(); }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !cpu_has_avx2())
    throw ConfigError("kernel backend avx2 is not available on this CPU");
  g_backend.store(b, std::memory_order_relaxed);
  g_table.store(table_for(b), std::memory_order_release);
}

void axpy(double* y, double a, const double* x, std::size_t n) {
  active().axpy(y, a, x, n);
}
double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
void add(double* out, const double* a, const double* b, std::size_t n) {
  active().add(out, a, b, n);
}
void sub(double* out, const double* a, const double* b, std::size_t n) {
  active().sub(out, a, b, n);
}
void mul(double* out, const double* a, const double* b, std::size_t n) {
  active().mul(out, a, b, n);
}
void scale(double* out, const double* x, double a, std::size_t n) {
  active().scale(out, x, a, n);
}
double sum(const double* x, std::size_t n) { return active().sum(x, n); }
double max_value(const double* x, std::size_t n) {
  return active().max_value(x, n);
}
double sq_norm(const double* x, std::size_t n) {
  return active().sq_norm(x, n);
}
void relu(double* out, const double* x, std::size_t n) {
  active().relu(out, x, n);
}
void relu_backward(double* dx, const double* dy, const double* x,
                   std::size_t n) {
  active().relu_backward(dx, dy, x, n);
}
void adam_step(double* p, double* m, double* v, const double* g,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bias1, double bias2) {
  active().adam_step(p, m, v, g, n, lr, beta1, beta2, eps, bias1, bias2);
}

#if !defined(MOEFUSE_HAVE_AVX2_TU)
// Stubs keep the avx2:: symbols defined on targets without the AVX2 TU.
namespace avx2 {
bool compiled() { return false; }
void axpy(double* y, double a, const double* x, std::size_t n) {
  ref::axpy(y, a, x, n);
}
double dot(const double* a, const double* b, std::size_t n) {
  return ref::dot(a, b, n);
}
void add(double* out, const double* a, const double* b, std::size_t n) {
  ref::add(out, a, b, n);
}
void sub(double* out, const double* a, const double* b, std::size_t n) {
  ref::sub(out, a, b, n);
}
void mul(double* out, const double* a, const double* b, std::size_t n) {
  ref::mul(out, a, b, n);
}
void scale(double* out, const double* x, double a, std::size_t n) {
  ref::scale(out, x, a, n);
}
double sum(const double* x, std::size_t n) { return ref::sum(x, n); }
double max_value(const double* x, std::size_t n) {
  return ref::max_value(x, n);
}
double sq_norm(const double* x, std::size_t n) { return ref::sq_norm(x, n); }
void relu(double* out, const double* x, std::size_t n) {
  ref::relu(out, x, n);
}
void relu_backward(double* dx, const double* dy, const double* x,
                   std::size_t n) {
  ref::relu_backward(dx, dy, x, n);
}
void adam_step(double* p, double* m, double* v, const double* g,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bias1, double bias2) {
  ref::adam_step(p, m, v, g, n, lr, beta1, beta2, eps, bias1, bias2);
}
}  // namespace avx2
#endif

}  // namespace moefuse::kernels
