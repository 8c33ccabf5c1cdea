// SPDX-License-Identifier: Apache-2.0
#include "dance/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "dance/error.hpp"

namespace dance {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("tensor: " + std::to_string(data_.size()) + " values do not fill shape " +
                     shape_str(shape_));
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <class T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
  shape_ = std::move(shape);
  return std::move(*this);
}

template <class T>
Tensor<T> Tensor<T>::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() == 0 || begin > end || end > shape_[0])
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of " + shape_str(shape_));
  const std::size_t row = shape_numel(Shape(shape_.begin() + 1, shape_.end()));
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                     data_.begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(out_shape), std::move(out));
}

template <class T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <class T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

template <class T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != tail.size() + 1 || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1))
      throw ShapeError("concat_rows: mismatched " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * shape_numel(tail));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor<T>(std::move(shape), std::move(out));
}

template class Tensor<float>;
template class Tensor<double>;
template bool bit_equal(const Tensor<float>&, const Tensor<float>&);
template bool bit_equal(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> concat_rows(std::span<const Tensor<float>>);
template Tensor<double> concat_rows(std::span<const Tensor<double>>);

}  // namespace dance
