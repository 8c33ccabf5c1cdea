// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "dance/kernels.hpp"

namespace dance::kernels {
namespace {

void micro_scalar(std::size_t kc, const float* a, std::size_t rs_a, std::size_t cs_a,
                  const float* b, float* c, std::size_t ldc, float alpha) {
  float acc[kGemmMr][kGemmNr] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const float* bp = b + p * kGemmNr;
    for (std::size_t i = 0; i < kGemmMr; ++i) {
      const float ai = a[i * rs_a + p * cs_a];
      for (std::size_t j = 0; j < kGemmNr; ++j) acc[i][j] += ai * bp[j];
    }
  }
  for (std::size_t i = 0; i < kGemmMr; ++i)
    for (std::size_t j = 0; j < kGemmNr; ++j) c[i * ldc + j] += alpha * acc[i][j];
}

float dot_scalar(const float* x, const float* y, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

bool all_finite_scalar(const float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

void sgd_momentum_scalar(float* p, const float* g, float* v, std::size_t n, float lr,
                         float momentum, float wd) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i] + wd * p[i];
    p[i] -= lr * v[i];
  }
}

void relu_scalar(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

float sum_scalar(const float* x, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

float sq_dev_scalar(const float* x, std::size_t n, float mean) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += (x[i] - mean) * (x[i] - mean);
  return s;
}

void normalize_scalar(const float* x, float* xh, float* y, std::size_t n, float mean, float inv,
                      float gain, float shift) {
  for (std::size_t i = 0; i < n; ++i) {
    xh[i] = (x[i] - mean) * inv;
    y[i] = gain * xh[i] + shift;
  }
}

void norm_backward_scalar(const float* dy, const float* xh, float* y, std::size_t n, float a,
                          float b, float c) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * dy[i] + b * xh[i] + c;
}

}  // namespace

namespace detail {

const KernelTable& scalar_table() {
  static const KernelTable t{Isa::Scalar,       micro_scalar,        dot_scalar,
                             axpy_scalar,       all_finite_scalar,   sgd_momentum_scalar,
                             relu_scalar,       sum_scalar,          sq_dev_scalar,
                             normalize_scalar,  norm_backward_scalar};
  return t;
}

}  // namespace detail

bool all_finite(const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

}  // namespace dance::kernels
