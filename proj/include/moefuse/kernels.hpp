// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace moefuse::kernels {

/// Arithmetic inner loops used by the tensor layer and the optimizer.
/// Every kernel has a scalar reference implementation (ref::) and, on x86
/// with AVX2+FMA, a vectorized variant (avx2::). The active backend is
/// chosen once at startup: AVX2 when the CPU supports it, overridable with
/// the MOEFUSE_KERNELS environment variable (ref|avx2|auto) or
/// set_backend(). Variants are equivalence-tested against ref in
/// tests/test_kernels.cpp; reductions may differ from ref in the last bits
/// because of lane-wise accumulation order.

enum class Backend { Ref, Avx2 };

Backend active_backend();
const char* backend_name(Backend b);
bool avx2_supported();

/// Force a backend (throws ConfigError if unavailable). Intended for tests.
void set_backend(Backend b);

// y += a * x
void axpy(double* y, double a, const double* x, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void add(double* out, const double* a, const double* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);
// out = a * x
void scale(double* out, const double* x, double a, std::size_t n);
double sum(const double* x, std::size_t n);
// n must be >= 1
double max_value(const double* x, std::size_t n);
double sq_norm(const double* x, std::size_t n);
void relu(double* out, const double* x, std::size_t n);
// dx += dy where x > 0
void relu_backward(double* dx, const double* dy, const double* x,
                   std::size_t n);
/// One Adam update. bias1 = 1/(1-beta1^t), bias2 = 1/(1-beta2^t).
void adam_step(double* p, double* m, double* v, const double* g,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bias1, double bias2);

namespace ref {
void axpy(double* y, double a, const double* x, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void add(double* out, const double* a, const double* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);
void scale(double* out, const double* x, double a, std::size_t n);
double sum(const double* x, std::size_t n);
double max_value(const double* x, std::size_t n);
double sq_norm(const double* x, std::size_t n);
void relu(double* out, const double* x, std::size_t n);
void relu_backward(double* dx, const double* dy, const double* x,
                   std::size_t n);
void adam_step(double* p, double* m, double* v, const double* g,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bias1, double bias2);
}  // namespace ref

namespace avx2 {
bool compiled();
void axpy(double* y, double a, const double* x, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void add(double* out, const double* a, const double* b, std::size_t n);
void sub(double* out, const double* a, const double* b, std::size_t n);
void mul(double* out, const double* a, const double* b, std::size_t n);
void scale(double* out, const double* x, double a, std::size_t n);
double sum(const double* x, std::size_t n);
double max_value(const double* x, std::size_t n);
double sq_norm(const double* x, std::size_t n);
void relu(double* out, const double* x, std::size_t n);
void relu_backward(double* dx, const double* dy, const double* x,
                   std::size_t n);
void adam_step(double* p, double* m, double* v, const double* g,
               std::size_t n, double lr, double beta1, double beta2,
               double eps, double bias1, double bias2);
}  // namespace avx2

}  // namespace moefuse::kernels
