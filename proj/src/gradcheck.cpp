// SPDX-License-Identifier: Apache-2.0
#include "dance/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dance/error.hpp"

namespace dance {

template <class T>
Tensor<T> finite_diff_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                               T step) {
  if (!(step > T{0})) throw ShapeError("finite_diff_gradient: step must be positive");
  Tensor<T> probe = x;
  Tensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + step;
    const T up = f(probe);
    probe[i] = orig - step;
    const T down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_gradient: non-finite function value at element " +
                         std::to_string(i));
    grad[i] = (up - down) / (T{2} * step);
  }
  return grad;
}

template <class T>
double max_rel_error(const Tensor<T>& a, const Tensor<T>& b, double floor) {
  if (a.shape() != b.shape())
    throw ShapeError("max_rel_error: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

template Tensor<float> finite_diff_gradient(const std::function<float(const Tensor<float>&)>&,
                                            const Tensor<float>&, float);
template Tensor<double> finite_diff_gradient(const std::function<double(const Tensor<double>&)>&,
                                             const Tensor<double>&, double);
template double max_rel_error(const Tensor<float>&, const Tensor<float>&, double);
template double max_rel_error(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace dance
