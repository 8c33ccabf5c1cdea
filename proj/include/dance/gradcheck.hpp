// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "dance/tensor.hpp"

namespace dance {

/// Central-difference estimate of d f / d x, one element at a time.
/// Throws NumericError if f is non-finite at any probe point.
template <class T>
Tensor<T> finite_diff_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                               T step);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps entries
/// that are zero in both from dominating.
template <class T>
double max_rel_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-6);

}  // namespace dance
