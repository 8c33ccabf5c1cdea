// SPDX-License-Identifier: Apache-2.0
// Packed, cache-blocked GEMM driver (Goto/BLIS loop order). The driver is
// shared by every ISA; only the MR x NR micro-kernel differs.
#include <algorithm>
#include <vector>

#include "dance/kernels.hpp"

namespace dance::kernels {
namespace {

constexpr std::size_t kMr = kGemmMr;
constexpr std::size_t kNr = kGemmNr;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

static_assert(kMc % kMr == 0 && kNc % kNr == 0);

template <class T>
using Micro = void (*)(std::size_t, const T*, std::size_t, std::size_t, const T*, T*, std::size_t,
                       T);

void micro_ref_f64(std::size_t kc, const double* a, std::size_t rs_a, std::size_t cs_a,
                   const double* b, double* c, std::size_t ldc, double alpha) {
  double acc[kMr][kNr] = {};
  for (std::size_t p = 0; p < kc; ++p)
    for (std::size_t i = 0; i < kMr; ++i)
      for (std::size_t j = 0; j < kNr; ++j)
        acc[i][j] += a[i * rs_a + p * cs_a] * b[p * kNr + j];
  for (std::size_t i = 0; i < kMr; ++i)
    for (std::size_t j = 0; j < kNr; ++j) c[i * ldc + j] += alpha * acc[i][j];
}

template <class T>
struct Operand {
  const T* data;
  std::size_t ld;
  bool trans;
  T at(std::size_t r, std::size_t c) const { return trans ? data[c * ld + r] : data[r * ld + c]; }
};

// Rows past the end of A are zero filled so the micro-kernel can run a
// full MR tile.
template <class T>
void pack_a_edge(const Operand<T>& a, std::size_t row0, std::size_t rows, std::size_t col0,
                 std::size_t kc, T* out) {
  for (std::size_t p = 0; p < kc; ++p) {
    std::size_t i = 0;
    for (; i < rows; ++i) out[p * kMr + i] = a.at(row0 + i, col0 + p);
    for (; i < kMr; ++i) out[p * kMr + i] = T{0};
  }
}

template <class T>
void pack_b(const Operand<T>& b, std::size_t row0, std::size_t kc, std::size_t col0,
            std::size_t cols, T* out) {
  for (std::size_t jr = 0; jr < cols; jr += kNr) {
    const std::size_t nr = std::min(kNr, cols - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      std::size_t j = 0;
      if (!b.trans && nr == kNr) {
        const T* src = b.data + (row0 + p) * b.ld + col0 + jr;
        std::copy(src, src + kNr, out + p * kNr);
        continue;
      }
      for (; j < nr; ++j) out[p * kNr + j] = b.at(row0 + p, col0 + jr + j);
      for (; j < kNr; ++j) out[p * kNr + j] = T{0};
    }
    out += kc * kNr;
  }
}

template <class T>
void gemm_impl(Micro<T> micro, bool trans_a, bool trans_b, std::size_t m, std::size_t n,
               std::size_t k, T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb,
               T beta, T* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (beta == T{0}) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
  } else if (beta != T{1}) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
  }
  if (k == 0 || alpha == T{0}) return;

  const Operand<T> opa{a, lda, trans_a};
  const Operand<T> opb{b, ldb, trans_b};

  // Full MR row panels are read in place through strides; K is small
  // enough in this code base that packing A costs more than it saves.
  const std::size_t rs_a = trans_a ? 1 : lda;
  const std::size_t cs_a = trans_a ? lda : 1;

  thread_local std::vector<T> apack;
  thread_local std::vector<T> bpack;
  apack.resize(kMr * kKc);
  bpack.resize(kKc * kNc);
  T edge[kMr * kNr];

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      pack_b(opb, pc, kc, jc, nc, bpack.data());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        const std::size_t tail = mc % kMr;
        if (tail != 0) pack_a_edge(opa, ic + mc - tail, tail, pc, kc, apack.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const std::size_t nr = std::min(kNr, nc - jr);
          const T* bp = bpack.data() + (jr / kNr) * kc * kNr;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const std::size_t mr = std::min(kMr, mc - ir);
            const bool full_rows = mr == kMr;
            const T* ap = full_rows ? a + (ic + ir) * rs_a + pc * cs_a : apack.data();
            const std::size_t rs = full_rows ? rs_a : 1;
            const std::size_t cs = full_rows ? cs_a : kMr;
            T* cp = c + (ic + ir) * ldc + jc + jr;
            if (full_rows && nr == kNr) {
              micro(kc, ap, rs, cs, bp, cp, ldc, alpha);
            } else {
              std::fill(edge, edge + kMr * kNr, T{0});
              micro(kc, ap, rs, cs, bp, edge, kNr, alpha);
              for (std::size_t i = 0; i < mr; ++i)
                for (std::size_t j = 0; j < nr; ++j) cp[i * ldc + j] += edge[i * kNr + j];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc) {
  gemm_impl<float>(active().gemm_micro, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c,
                   ldc);
}

void gemm_with(Isa isa, bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
               float beta, float* c, std::size_t ldc) {
  gemm_impl<float>(table(isa).gemm_micro, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta,
                   c, ldc);
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc) {
  gemm_impl<double>(micro_ref_f64, trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c,
                    ldc);
}

}  // namespace dance::kernels
