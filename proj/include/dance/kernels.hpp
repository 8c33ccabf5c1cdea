// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation; on x86-64 an AVX2/FMA variant is compiled separately and
// selected at runtime when the CPU supports it. DANCE_ISA=scalar in the
// environment forces the reference path.

#include <cstddef>
#include <string_view>

namespace dance::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

/// Best ISA supported by both the build and the running CPU.
Isa detected_isa();

/// ISA used by the dispatching entry points below.
Isa active_isa();

/// Override the active ISA. Requesting an unavailable ISA falls back to
/// Scalar; returns the ISA actually installed.
Isa set_active_isa(Isa isa);

bool isa_available(Isa isa);

// GEMM register tile. A is read through row/column strides, B from a
// packed NR-wide panel; both ISAs share the driver.
inline constexpr std::size_t kGemmMr = 6;
inline constexpr std::size_t kGemmNr = 16;

/// C[MR x NR] += alpha * sum_k A(i, k) * b[k*NR + j], where A(i, k) is
/// a[i*rs_a + k*cs_a] and b is a packed NR-wide panel.
using MicroKernelF32 = void (*)(std::size_t kc, const float* a, std::size_t rs_a,
                                std::size_t cs_a, const float* b, float* c, std::size_t ldc,
                                float alpha);

struct KernelTable {
  Isa isa;
  MicroKernelF32 gemm_micro;
  float (*dot)(const float* x, const float* y, std::size_t n);
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  bool (*all_finite)(const float* x, std::size_t n);
  // v = momentum*v + g + wd*p ; p -= lr*v
  void (*sgd_momentum)(float* p, const float* g, float* v, std::size_t n, float lr,
                       float momentum, float wd);
  // y[i] = max(x[i], 0)
  void (*relu)(const float* x, float* y, std::size_t n);
  float (*sum)(const float* x, std::size_t n);
  // sum (x[i] - mean)^2
  float (*sq_dev)(const float* x, std::size_t n, float mean);
  // xh = (x - mean) * inv ; y = gain * xh + shift
  void (*normalize)(const float* x, float* xh, float* y, std::size_t n, float mean, float inv,
                    float gain, float shift);
  // y[i] += a*dy[i] + b*xh[i] + c
  void (*norm_backward)(const float* dy, const float* xh, float* y, std::size_t n, float a,
                        float b, float c);
};

const KernelTable& table(Isa isa);
const KernelTable& active();

// Dispatching wrappers over active().
inline float dot(const float* x, const float* y, std::size_t n) { return active().dot(x, y, n); }
inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline bool all_finite(const float* x, std::size_t n) { return active().all_finite(x, n); }

bool all_finite(const double* x, std::size_t n);

/// Row-major C = alpha * op(A) * op(B) + beta * C, op(A) is M x K and op(B)
/// is K x N. The float overload uses the active micro-kernel; the double
/// overload always runs the reference kernel.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc);

/// Same as the float gemm but pinned to one ISA (equivalence tests).
void gemm_with(Isa isa, bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
               float beta, float* c, std::size_t ldc);

namespace detail {
const KernelTable& scalar_table();
#if defined(DANCE_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
}  // namespace detail

}  // namespace dance::kernels
