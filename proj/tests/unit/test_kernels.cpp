// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "dance/kernels.hpp"
#include "dance/rng.hpp"

using namespace dance;
using kernels::Isa;

namespace {

std::vector<float> randv(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

void expect_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    ASSERT_NEAR(a[i], b[i], tol * (1.0 + std::abs(a[i]))) << "at " << i;
}

class Avx2Equivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!kernels::isa_available(Isa::Avx2)) GTEST_SKIP() << "AVX2 not available";
  }
  const kernels::KernelTable& s = kernels::table(Isa::Scalar);
  const kernels::KernelTable& v = kernels::table(Isa::Avx2);
};

// Sizes straddling the 8-lane width and its remainders.
const std::size_t kLengths[] = {0, 1, 3, 7, 8, 9, 15, 16, 17, 31, 64, 100, 1000};

}  // namespace

TEST(Kernels, TablesReportTheirIsa) {
  EXPECT_EQ(kernels::table(Isa::Scalar).isa, Isa::Scalar);
  EXPECT_TRUE(kernels::isa_available(Isa::Scalar));
  const Isa prev = kernels::active_isa();
  EXPECT_EQ(kernels::set_active_isa(Isa::Scalar), Isa::Scalar);
  EXPECT_EQ(kernels::active_isa(), Isa::Scalar);
  kernels::set_active_isa(prev);
}

TEST(Kernels, GemmMatchesNaiveReference) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.index(40), n = 1 + rng.index(40), k = 1 + rng.index(40);
    const bool ta = rng.index(2), tb = rng.index(2);
    const auto a = randv(rng, m * k), b = randv(rng, k * n);
    auto c = randv(rng, m * n);
    const float alpha = 0.7f, beta = trial % 3 == 0 ? 0.0f : 0.5f;
    std::vector<float> want(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p)
          acc += static_cast<double>(ta ? a[p * m + i] : a[i * k + p]) *
                 static_cast<double>(tb ? b[j * k + p] : b[p * n + j]);
        want[i * n + j] = static_cast<float>(alpha * acc + (beta == 0.0f ? 0.0 : beta * c[i * n + j]));
      }
    kernels::gemm(ta, tb, m, n, k, alpha, a.data(), ta ? m : k, b.data(), tb ? k : n, beta,
                  c.data(), n);
    expect_close(c, want, 1e-4);
  }
}

TEST(Kernels, DoubleGemmIsExactOnIntegers) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};  // 2x3
  const std::vector<double> b{1, 0, 0, 1, 1, 1};  // 3x2
  std::vector<double> c(4, 0.0);
  kernels::gemm(false, false, 2, 2, 3, 1.0, a.data(), 3, b.data(), 2, 0.0, c.data(), 2);
  EXPECT_EQ(c, (std::vector<double>{4, 5, 10, 11}));
}

TEST_F(Avx2Equivalence, MicroKernelWithStrides) {
  Rng rng(5);
  const std::size_t mr = kernels::kGemmMr, nr = kernels::kGemmNr;
  for (std::size_t kc : {1u, 2u, 7u, 64u}) {
    for (bool trans : {false, true}) {
      const std::size_t lda = kc + 3;
      const auto a = randv(rng, mr * lda + kc * (mr + 2));
      const auto b = randv(rng, kc * nr);
      const std::size_t rs = trans ? 1 : lda, cs = trans ? mr + 2 : 1;
      auto c1 = randv(rng, mr * (nr + 5));
      auto c2 = c1;
      s.gemm_micro(kc, a.data(), rs, cs, b.data(), c1.data(), nr + 5, 0.5f);
      v.gemm_micro(kc, a.data(), rs, cs, b.data(), c2.data(), nr + 5, 0.5f);
      expect_close(c1, c2, 1e-5);
    }
  }
}

TEST_F(Avx2Equivalence, GemmBothIsas) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.index(70), n = 1 + rng.index(70), k = 1 + rng.index(300);
    const bool ta = rng.index(2), tb = rng.index(2);
    const auto a = randv(rng, m * k), b = randv(rng, k * n);
    std::vector<float> c1(m * n), c2(m * n);
    kernels::gemm_with(Isa::Scalar, ta, tb, m, n, k, 1.0f, a.data(), ta ? m : k, b.data(),
                       tb ? k : n, 0.0f, c1.data(), n);
    kernels::gemm_with(Isa::Avx2, ta, tb, m, n, k, 1.0f, a.data(), ta ? m : k, b.data(),
                       tb ? k : n, 0.0f, c2.data(), n);
    expect_close(c1, c2, 1e-4);
  }
}

TEST_F(Avx2Equivalence, Reductions) {
  Rng rng(9);
  for (std::size_t n : kLengths) {
    const auto x = randv(rng, n), y = randv(rng, n);
    EXPECT_NEAR(s.dot(x.data(), y.data(), n), v.dot(x.data(), y.data(), n), 1e-4 * (1 + n));
    EXPECT_NEAR(s.sum(x.data(), n), v.sum(x.data(), n), 1e-4 * (1 + n));
    EXPECT_NEAR(s.sq_dev(x.data(), n, 0.3f), v.sq_dev(x.data(), n, 0.3f), 1e-4 * (1 + n));
  }
}

TEST_F(Avx2Equivalence, Elementwise) {
  Rng rng(11);
  for (std::size_t n : kLengths) {
    const auto x = randv(rng, n), g = randv(rng, n), dy = randv(rng, n);
    auto y1 = randv(rng, n);
    auto y2 = y1;
    s.axpy(0.3f, x.data(), y1.data(), n);
    v.axpy(0.3f, x.data(), y2.data(), n);
    expect_close(y1, y2, 1e-6);

    std::vector<float> r1(n), r2(n);
    s.relu(x.data(), r1.data(), n);
    v.relu(x.data(), r2.data(), n);
    EXPECT_EQ(r1, r2);

    auto p1 = x, p2 = x, v1 = g, v2 = g;
    s.sgd_momentum(p1.data(), g.data(), v1.data(), n, 0.1f, 0.9f, 5e-4f);
    v.sgd_momentum(p2.data(), g.data(), v2.data(), n, 0.1f, 0.9f, 5e-4f);
    expect_close(p1, p2, 1e-6);
    expect_close(v1, v2, 1e-6);

    std::vector<float> xh1(n), xh2(n), o1(n), o2(n);
    s.normalize(x.data(), xh1.data(), o1.data(), n, 0.2f, 1.7f, 0.8f, -0.1f);
    v.normalize(x.data(), xh2.data(), o2.data(), n, 0.2f, 1.7f, 0.8f, -0.1f);
    expect_close(xh1, xh2, 1e-6);
    expect_close(o1, o2, 1e-6);

    auto b1 = g, b2 = g;
    s.norm_backward(dy.data(), x.data(), b1.data(), n, 0.4f, -0.2f, 0.05f);
    v.norm_backward(dy.data(), x.data(), b2.data(), n, 0.4f, -0.2f, 0.05f);
    expect_close(b1, b2, 1e-6);
  }
}

TEST_F(Avx2Equivalence, AllFiniteDetectsEveryPosition) {
  for (std::size_t n : kLengths) {
    std::vector<float> x(n, 1.0f);
    EXPECT_TRUE(s.all_finite(x.data(), n));
    EXPECT_TRUE(v.all_finite(x.data(), n));
    for (std::size_t i = 0; i < n; i += 1 + n / 7) {
      for (float bad : {std::numeric_limits<float>::quiet_NaN(),
                        std::numeric_limits<float>::infinity()}) {
        x[i] = bad;
        EXPECT_FALSE(s.all_finite(x.data(), n));
        EXPECT_FALSE(v.all_finite(x.data(), n));
        x[i] = 1.0f;
      }
    }
  }
}

TEST(Kernels, ScalarReferenceValues) {
  const auto& s = kernels::table(Isa::Scalar);
  const float x[] = {1, -2, 3};
  const float y[] = {4, 5, 6};
  EXPECT_FLOAT_EQ(s.dot(x, y, 3), 12.0f);
  EXPECT_FLOAT_EQ(s.sum(x, 3), 2.0f);
  EXPECT_FLOAT_EQ(s.sq_dev(x, 3, 1.0f), 0 + 9 + 4);
  float r[3];
  s.relu(x, r, 3);
  EXPECT_EQ(r[1], 0.0f);
  float p[] = {1.0f}, g[] = {2.0f}, vel[] = {1.0f};
  s.sgd_momentum(p, g, vel, 1, 0.1f, 0.9f, 0.5f);
  EXPECT_FLOAT_EQ(vel[0], 0.9f + 2.0f + 0.5f);
  EXPECT_FLOAT_EQ(p[0], 1.0f - 0.1f * 3.4f);
}
