// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dance/autodiff.hpp"
#include "dance/error.hpp"
#include "dance/gradcheck.hpp"
#include "dance/ops.hpp"
#include "dance/rng.hpp"
#include "grad_suite.hpp"

using namespace dance;

namespace {

Tensor<double> randn(Rng& rng, Shape shape) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndReshape) {
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3u);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_THROW(t.slice_rows(1, 3), ShapeError);
}

TEST(Tensor, BitEqualSeesSignedZero) {
  Tensor<float> a({1}, 0.0f), b({1}, -0.0f);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(bit_equal(a, b));
}

TEST(Tape, GradientOfSimpleExpression) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, std::vector<double>{1.0, 2.0}));
  auto y = sum(mul(x, x));  // grad 2x
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], 4.0);
}

TEST(Tape, FanOutAccumulates) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1}, 3.0));
  auto y = sum(add(scale(x, 2.0), mul(x, x)));  // 2 + 2x
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 8.0);
}

TEST(Tape, UnusedLeafGetsZeroGradient) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, 1.0));
  auto unused = tape.leaf(Tensor<double>({3}, 1.0));
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(unused), Tensor<double>({3}, 0.0));
}

TEST(Tape, SingleBackwardOnly) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1}, 1.0));
  auto y = sum(x);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), TapeError);
  EXPECT_THROW(sum(x), TapeError);
}

TEST(Tape, RejectsNonScalarLossAndMixedTapes) {
  Tape<double> a, b;
  auto x = a.leaf(Tensor<double>({2}, 1.0));
  auto y = b.leaf(Tensor<double>({2}, 1.0));
  EXPECT_THROW(a.backward(x), TapeError);
  EXPECT_THROW(add(x, y), TapeError);
}

TEST(Tape, ConstantsDoNotReceiveGradients) {
  Tape<double> tape;
  auto c = tape.constant(Tensor<double>({1}, 2.0));
  auto x = tape.leaf(Tensor<double>({1}, 3.0));
  tape.backward(sum(mul(c, x)));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 2.0);
  EXPECT_THROW(tape.grad(c), TapeError);
}

TEST(Tape, NonFiniteValuesAreRejected) {
  Tape<float> tape;
  EXPECT_THROW(tape.leaf(Tensor<float>({1}, std::numeric_limits<float>::infinity())),
               NumericError);
  auto x = tape.leaf(Tensor<float>({1}, 1e30f));
  EXPECT_THROW(mul(x, x), NumericError);
}

TEST(Ops, Conv2dMatchesDirectLoops) {
  Rng rng(1);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      const auto x = randn(rng, {2, 3, 5, 6});
      const auto w = randn(rng, {4, 3, 3, 3});
      const auto b = randn(rng, {4});
      Tape<double> tape;
      const auto y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride, pad).value();
      const std::size_t ho = (5 + 2 * pad - 3) / stride + 1, wo = (6 + 2 * pad - 3) / stride + 1;
      ASSERT_EQ(y.shape(), (Shape{2, 4, ho, wo}));
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
          for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
              double acc = b[o];
              for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t ky = 0; ky < 3; ++ky)
                  for (std::size_t kx = 0; kx < 3; ++kx) {
                    const long iy = static_cast<long>(i * stride + ky) - static_cast<long>(pad);
                    const long ix = static_cast<long>(j * stride + kx) - static_cast<long>(pad);
                    if (iy < 0 || ix < 0 || iy >= 5 || ix >= 6) continue;
                    acc += w.at(o, c, ky, kx) * x.at(n, c, iy, ix);
                  }
              EXPECT_NEAR(y.at(n, o, i, j), acc, 1e-12);
            }
    }
  }
}

TEST(Ops, AvgPoolCountsPaddingInDivisor) {
  Tape<double> tape;
  const auto y = avg_pool2d(tape.constant(Tensor<double>({1, 1, 2, 2}, 9.0)), 3, 2, 1).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 4.0);  // four valid cells of 9, divided by 9
}

TEST(Ops, InstanceNormStandardizesEachPlane) {
  Rng rng(2);
  Tape<double> tape;
  const auto y = instance_norm(tape.constant(randn(rng, {2, 3, 4, 4})),
                               tape.constant(Tensor<double>({3}, 1.0)),
                               tape.constant(Tensor<double>({3}, 0.0)))
                     .value();
  for (std::size_t p = 0; p < 6; ++p) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 16; ++i) m += y[p * 16 + i];
    m /= 16;
    for (std::size_t i = 0; i < 16; ++i) v += (y[p * 16 + i] - m) * (y[p * 16 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 16, 1.0, 1e-3);
  }
}

TEST(Ops, SoftmaxCrossEntropyUniformLogits) {
  Tape<double> tape;
  const std::uint32_t labels[] = {0, 3};
  const auto l = softmax_cross_entropy(tape.constant(Tensor<double>({2, 4}, 0.7)),
                                       std::span<const std::uint32_t>(labels));
  EXPECT_NEAR(l.value()[0], std::log(4.0), 1e-12);
  const std::uint32_t bad[] = {4, 0};
  EXPECT_THROW(softmax_cross_entropy(tape.constant(Tensor<double>({2, 4}, 0.0)),
                                     std::span<const std::uint32_t>(bad)),
               ShapeError);
}

TEST(Ops, BilinearSameSizeIsIdentity) {
  Rng rng(3);
  const auto x = randn(rng, {1, 2, 3, 5});
  Tape<double> tape;
  EXPECT_EQ(bilinear_upsample(tape.constant(x), 3, 5).value(), x);
}

TEST(Ops, CropCellsLayout) {
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  Tape<double> tape;
  const auto y = crop_cells(tape.constant(x), 2).value();
  ASSERT_EQ(y.shape(), (Shape{4, 1, 2, 2}));
  EXPECT_EQ(y.at(1, 0, 0, 0), 2.0);   // cell (0, 1)
  EXPECT_EQ(y.at(2, 0, 0, 0), 8.0);   // cell (1, 0)
  EXPECT_EQ(y.at(3, 0, 1, 1), 15.0);  // cell (1, 1)
}

TEST(Ops, ShiftCropFillsZeros) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Tape<double> tape;
  const int dy[] = {1}, dx[] = {0};
  const auto y = shift_crop(tape.constant(x), std::span<const int>(dy), std::span<const int>(dx)).value();
  EXPECT_EQ(y, Tensor<double>({1, 1, 2, 2}, std::vector<double>{3, 4, 0, 0}));
}

TEST(Ops, ShapeErrorsNameTheOp) {
  Tape<double> tape;
  try {
    linear(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({4, 5})),
           tape.constant(Tensor<double>({4})));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("linear"), std::string::npos);
  }
}

TEST(Ops, FloatAndDoubleAgree) {
  Rng rng(4);
  const auto x = randn(rng, {2, 2, 6, 6});
  const auto w = randn(rng, {3, 2, 3, 3});
  Tape<double> td;
  Tape<float> tf;
  auto yd = avg_pool2d(relu(conv2d(td.constant(x), td.constant(w), td.constant(Tensor<double>({3})), 1, 1)), 3, 2, 1);
  auto yf = avg_pool2d(relu(conv2d(tf.constant(tensor_cast<float>(x)), tf.constant(tensor_cast<float>(w)),
                                   tf.constant(Tensor<float>({3})), 1, 1)),
                       3, 2, 1);
  for (std::size_t i = 0; i < yd.value().size(); ++i)
    EXPECT_NEAR(yd.value()[i], yf.value()[i], 1e-4);
}

TEST(GradCheck, FiniteDifferenceOfQuadratic) {
  const Tensor<double> x({3}, std::vector<double>{1, -2, 0.5});
  auto g = finite_diff_gradient<double>(
      [](const Tensor<double>& t) {
        double s = 0;
        for (double v : t.values()) s += v * v * v;
        return s;
      },
      x, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], 3 * x[i] * x[i], 1e-8);
}

// Reduced instance count; the acceptance runner uses 100 per case.
TEST(GradCheck, SuiteOnRandomInstances) {
  for (const auto& s : dance::testing::run_grad_suite(8, 2024)) {
    EXPECT_TRUE(s.pass) << s.name << " worst relative error " << s.worst;
  }
}
