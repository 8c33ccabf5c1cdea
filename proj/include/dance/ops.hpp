// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable tensor ops. Image tensors are NCHW. Every op validates
// shapes and throws ShapeError with the offending extents; outputs are
// checked for finiteness by the tape.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dance/autodiff.hpp"

namespace dance {

/// Cross-correlation with square odd kernels. weight is [C_out, C_in, k, k].
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t padding);

/// Window mean with a fixed k*k divisor (padded zeros count).
template <class T>
Var<T> avg_pool2d(const Var<T>& input, std::size_t kernel, std::size_t stride,
                  std::size_t padding);

/// Per-sample, per-channel standardization over H*W followed by gain/shift.
template <class T>
Var<T> instance_norm(const Var<T>& input, const Var<T>& gain, const Var<T>& shift,
                     double eps = 1e-5);

/// max(0, x); the gradient at exactly 0 is 0.
template <class T>
Var<T> relu(const Var<T>& input);

/// input [N, D], weight [K, D], bias [K] -> [N, K].
template <class T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

/// Bilinear resize with half-pixel centres (source coordinates clamped at 0).
template <class T>
Var<T> bilinear_upsample(const Var<T>& input, std::size_t out_h, std::size_t out_w);

/// Mean over rows of -log softmax(logits)[label].
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::uint32_t> labels);

/// ||mean_rows(a) - mean_rows(b)||^2 for a [Na, D], b [Nb, D].
template <class T>
Var<T> mean_embedding_sq_dist(const Var<T>& a, const Var<T>& b);

// Structural and elementwise helpers.

template <class T>
Var<T> reshape(const Var<T>& input, Shape shape);

/// [N, ...] -> [N, prod(...)].
template <class T>
Var<T> flatten(const Var<T>& input);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> scale(const Var<T>& a, double factor);

/// Sum of all elements as a rank-0 tensor.
template <class T>
Var<T> sum(const Var<T>& a);

/// Rows [begin, end) along axis 0.
template <class T>
Var<T> slice_rows(const Var<T>& input, std::size_t begin, std::size_t end);

template <class T>
Var<T> concat_rows(std::span<const Var<T>> parts);

/// Split every [C, H, W] image into an l x l grid of [C, H/l, W/l] cells.
/// Output row n*l*l + i*l + j holds cell (i, j) of image n.
template <class T>
Var<T> crop_cells(const Var<T>& input, std::size_t factor);

/// Per-sample y = (x*b - m)*c + m with m the mean of x*b over C, H, W.
template <class T>
Var<T> color_jitter(const Var<T>& input, std::span<const double> brightness,
                    std::span<const double> contrast);

/// Per-sample translation with zero fill: y[h][w] = x[h + dy][w + dx].
template <class T>
Var<T> shift_crop(const Var<T>& input, std::span<const int> dy, std::span<const int> dx);

}  // namespace dance
