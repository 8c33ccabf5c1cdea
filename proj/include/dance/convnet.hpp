// SPDX-License-Identifier: Apache-2.0
#pragma once

// The ConvNet family: `depth` identical blocks of
//   conv 3x3 (pad 1, `width` filters) -> instance norm -> ReLU -> avg pool 3/2/1
// followed by a linear classification head. The encoder is the trunk
// without the head.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dance/autodiff.hpp"
#include "dance/tensor.hpp"

namespace dance {

struct ConvNetSpec {
  std::size_t depth = 3;
  std::size_t width = 128;
  std::size_t in_channels = 1;
  std::size_t image_height = 28;
  std::size_t image_width = 28;
  std::size_t classes = 10;

  static constexpr std::size_t kConvKernel = 3;
  static constexpr std::size_t kConvPadding = 1;
  static constexpr std::size_t kPoolKernel = 3;
  static constexpr std::size_t kPoolStride = 2;
  static constexpr std::size_t kPoolPadding = 1;

  /// Spatial extent after all blocks: each pool maps n -> ceil(n / 2).
  std::size_t final_height() const;
  std::size_t final_width() const;
  std::size_t feature_dim() const { return width * final_height() * final_width(); }

  /// Throws ShapeError when any extent is zero.
  void validate() const;
  std::string describe() const;

  bool operator==(const ConvNetSpec&) const = default;
};

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

/// Ordered named parameters of one network plus its descriptor.
template <class T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(ConvNetSpec spec, std::vector<NamedTensor<T>> entries);

  const ConvNetSpec& spec() const { return spec_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  NamedTensor<T>& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Tensor<T>& get(std::string_view name);
  const Tensor<T>& get(std::string_view name) const;

  /// Same descriptor, names and per-name shapes.
  bool combinable_with(const ParamSet& other) const;

  template <class U>
  ParamSet<U> cast() const {
    std::vector<NamedTensor<U>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back({e.name, tensor_cast<U>(e.value)});
    return ParamSet<U>(spec_, std::move(out));
  }

 private:
  ConvNetSpec spec_;
  std::vector<NamedTensor<T>> entries_;
};

/// Canonical parameter names/shapes in layer order.
std::vector<std::pair<std::string, Shape>> convnet_layout(const ConvNetSpec& spec);

/// Fresh network: conv and head weights ~ N(0, 2/fan_in), biases 0, norm
/// gain 1 / shift 0. Same seed gives bit-identical parameters.
ParamSet<float> build_convnet(const ConvNetSpec& spec, std::uint64_t seed);

/// Parameters placed on a tape, in ParamSet order.
template <class T>
struct BoundNet {
  ConvNetSpec spec;
  std::vector<Var<T>> params;
};

template <class T>
BoundNet<T> bind(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad);

/// Flattened features of the last block, [N, feature_dim].
template <class T>
Var<T> encoder_forward(const BoundNet<T>& net, const Var<T>& images);

/// Head applied to encoder features, [N, classes].
template <class T>
Var<T> classifier_head(const BoundNet<T>& net, const Var<T>& features);

template <class T>
Var<T> classifier_forward(const BoundNet<T>& net, const Var<T>& images);

/// Inference helpers without gradients, evaluated in chunks of `chunk` images.
template <class T>
Tensor<T> encode(const ParamSet<T>& params, const Tensor<T>& images, std::size_t chunk = 256);
template <class T>
Tensor<T> predict_logits(const ParamSet<T>& params, const Tensor<T>& images,
                         std::size_t chunk = 256);

/// lambda * init + (1 - lambda) * expert over every parameter. The
/// endpoints return exact copies.
template <class T>
ParamSet<T> interpolate_params(const ParamSet<T>& init, const ParamSet<T>& expert, double lambda);

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Velocity buffers aligned with a ParamSet (allocated on first step).
template <class T>
struct MomentumState {
  std::vector<Tensor<T>> velocity;
};

/// v <- momentum*v + grad + wd*param ; param <- param - lr*v
template <class T>
void sgd_momentum_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
                         const SgdOptions& opts);

template <class T>
void sgd_momentum_step(ParamSet<T>& params, std::span<const Tensor<T>> grads,
                       const SgdOptions& opts, MomentumState<T>& state);

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace dance
