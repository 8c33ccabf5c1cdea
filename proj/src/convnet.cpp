// SPDX-License-Identifier: Apache-2.0
#include "dance/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dance/error.hpp"
#include "dance/kernels.hpp"
#include "dance/ops.hpp"
#include "dance/rng.hpp"

namespace dance {
namespace {

std::size_t after_blocks(std::size_t extent, std::size_t depth) {
  for (std::size_t d = 0; d < depth; ++d) extent = (extent + 1) / 2;
  return extent;
}

}  // namespace

std::size_t ConvNetSpec::final_height() const { return after_blocks(image_height, depth); }
std::size_t ConvNetSpec::final_width() const { return after_blocks(image_width, depth); }

void ConvNetSpec::validate() const {
  if (depth == 0 || width == 0 || in_channels == 0 || image_height == 0 || image_width == 0 ||
      classes == 0)
    throw ShapeError("convnet: invalid spec " + describe());
}

std::string ConvNetSpec::describe() const {
  std::ostringstream os;
  os << "ConvNet(depth=" << depth << ", width=" << width << ", input=" << in_channels << "x"
     << image_height << "x" << image_width << ", classes=" << classes << ")";
  return os.str();
}

std::vector<std::pair<std::string, Shape>> convnet_layout(const ConvNetSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in = spec.in_channels;
  const std::size_t k = ConvNetSpec::kConvKernel;
  for (std::size_t d = 0; d < spec.depth; ++d) {
    const std::string p = "block" + std::to_string(d) + ".";
    out.emplace_back(p + "conv.weight", Shape{spec.width, in, k, k});
    out.emplace_back(p + "conv.bias", Shape{spec.width});
    out.emplace_back(p + "norm.gain", Shape{spec.width});
    out.emplace_back(p + "norm.shift", Shape{spec.width});
    in = spec.width;
  }
  out.emplace_back("head.weight", Shape{spec.classes, spec.feature_dim()});
  out.emplace_back("head.bias", Shape{spec.classes});
  return out;
}

template <class T>
ParamSet<T>::ParamSet(ConvNetSpec spec, std::vector<NamedTensor<T>> entries)
    : spec_(spec), entries_(std::move(entries)) {
  const auto layout = convnet_layout(spec_);
  if (layout.size() != entries_.size())
    throw ShapeError("paramset: expected " + std::to_string(layout.size()) + " tensors for " +
                     spec_.describe() + ", got " + std::to_string(entries_.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (entries_[i].name != layout[i].first || entries_[i].value.shape() != layout[i].second)
      throw ShapeError("paramset: entry " + std::to_string(i) + " is " + entries_[i].name +
                       shape_str(entries_[i].value.shape()) + ", expected " + layout[i].first +
                       shape_str(layout[i].second));
  }
}

template <class T>
std::size_t ParamSet<T>::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <class T>
Tensor<T>& ParamSet<T>::get(std::string_view name) {
  for (auto& e : entries_)
    if (e.name == name) return e.value;
  throw ShapeError("paramset: no parameter named " + std::string(name));
}

template <class T>
const Tensor<T>& ParamSet<T>::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw ShapeError("paramset: no parameter named " + std::string(name));
}

template <class T>
bool ParamSet<T>::combinable_with(const ParamSet& other) const {
  if (!(spec_ == other.spec_) || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].value.shape() != other.entries_[i].value.shape())
      return false;
  return true;
}

ParamSet<float> build_convnet(const ConvNetSpec& spec, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "convnet.init");
  std::vector<NamedTensor<float>> entries;
  for (auto& [name, shape] : convnet_layout(spec)) {
    Tensor<float> t(shape);
    const bool is_weight = name.ends_with(".weight");
    if (is_weight) {
      const std::size_t fan_in = t.size() / shape[0];
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal() * std_dev);
    } else if (name.ends_with(".gain")) {
      t.fill(1.0f);
    }
    entries.push_back({name, std::move(t)});
  }
  return ParamSet<float>(spec, std::move(entries));
}

template <class T>
BoundNet<T> bind(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad) {
  BoundNet<T> net{params.spec(), {}};
  net.params.reserve(params.size());
  for (const auto& e : params) net.params.push_back(tape.leaf(e.value, requires_grad));
  return net;
}

template <class T>
Var<T> encoder_forward(const BoundNet<T>& net, const Var<T>& images) {
  const ConvNetSpec& s = net.spec;
  const Shape& in = images.shape();
  if (in.size() != 4 || in[1] != s.in_channels || in[2] != s.image_height ||
      in[3] != s.image_width)
    throw ShapeError("encoder_forward: images " + shape_str(in) + " do not match " +
                     s.describe());
  Var<T> h = images;
  for (std::size_t d = 0; d < s.depth; ++d) {
    const Var<T>* p = net.params.data() + 4 * d;
    h = conv2d(h, p[0], p[1], 1, ConvNetSpec::kConvPadding);
    h = instance_norm(h, p[2], p[3]);
    h = relu(h);
    h = avg_pool2d(h, ConvNetSpec::kPoolKernel, ConvNetSpec::kPoolStride,
                   ConvNetSpec::kPoolPadding);
  }
  return flatten(h);
}

template <class T>
Var<T> classifier_head(const BoundNet<T>& net, const Var<T>& features) {
  const std::size_t head = 4 * net.spec.depth;
  return linear(features, net.params[head], net.params[head + 1]);
}

template <class T>
Var<T> classifier_forward(const BoundNet<T>& net, const Var<T>& images) {
  return classifier_head(net, encoder_forward(net, images));
}

namespace {

template <class T, class Fn>
Tensor<T> chunked(const ParamSet<T>& params, const Tensor<T>& images, std::size_t chunk,
                  std::size_t cols, Fn&& fn) {
  if (images.rank() != 4) throw ShapeError("inference: images must be NCHW");
  const std::size_t n = images.dim(0);
  chunk = std::max<std::size_t>(chunk, 1);
  Tensor<T> out({n, cols});
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Tape<T> tape;
    BoundNet<T> net = bind(tape, params, false);
    Var<T> x = tape.constant(images.slice_rows(b, e));
    Var<T> y = fn(net, x);
    std::copy(y.value().data(), y.value().data() + y.value().size(), out.data() + b * cols);
  }
  return out;
}

}  // namespace

template <class T>
Tensor<T> encode(const ParamSet<T>& params, const Tensor<T>& images, std::size_t chunk) {
  return chunked(params, images, chunk, params.spec().feature_dim(),
                 [](const BoundNet<T>& net, const Var<T>& x) { return encoder_forward(net, x); });
}

template <class T>
Tensor<T> predict_logits(const ParamSet<T>& params, const Tensor<T>& images, std::size_t chunk) {
  return chunked(params, images, chunk, params.spec().classes,
                 [](const BoundNet<T>& net, const Var<T>& x) { return classifier_forward(net, x); });
}

template <class T>
ParamSet<T> interpolate_params(const ParamSet<T>& init, const ParamSet<T>& expert, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ShapeError("interpolate_params: lambda " + std::to_string(lambda) + " outside [0,1]");
  if (!init.combinable_with(expert))
    throw ShapeError("interpolate_params: descriptors differ: " + init.spec().describe() + " vs " +
                     expert.spec().describe());
  if (lambda == 1.0) return init;
  if (lambda == 0.0) return expert;
  const T a = static_cast<T>(lambda);
  const T b = static_cast<T>(1.0 - lambda);
  ParamSet<T> out = init;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Tensor<T>& dst = out[i].value;
    const Tensor<T>& src = expert[i].value;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = a * dst[j] + b * src[j];
  }
  return out;
}

namespace {

void sgd_values(float* p, const float* g, float* v, std::size_t n, const SgdOptions& o) {
  kernels::active().sgd_momentum(p, g, v, n, static_cast<float>(o.lr),
                                 static_cast<float>(o.momentum),
                                 static_cast<float>(o.weight_decay));
}

void sgd_values(double* p, const double* g, double* v, std::size_t n, const SgdOptions& o) {
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = o.momentum * v[i] + g[i] + o.weight_decay * p[i];
    p[i] -= o.lr * v[i];
  }
}

}  // namespace

template <class T>
void sgd_momentum_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
                         const SgdOptions& opts) {
  if (grad.shape() != param.shape())
    throw ShapeError("sgd: gradient " + shape_str(grad.shape()) + " vs parameter " +
                     shape_str(param.shape()));
  if (velocity.shape() != param.shape()) velocity = Tensor<T>(param.shape());
  sgd_values(param.data(), grad.data(), velocity.data(), param.size(), opts);
}

template <class T>
void sgd_momentum_step(ParamSet<T>& params, std::span<const Tensor<T>> grads,
                       const SgdOptions& opts, MomentumState<T>& state) {
  if (grads.size() != params.size())
    throw ShapeError("sgd: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  state.velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    sgd_momentum_update(params[i].value, grads[i], state.velocity[i], opts);
}

template class ParamSet<float>;
template class ParamSet<double>;

#define DANCE_INSTANTIATE_NET(T)                                                              \
  template BoundNet<T> bind(Tape<T>&, const ParamSet<T>&, bool);                              \
  template Var<T> encoder_forward(const BoundNet<T>&, const Var<T>&);                         \
  template Var<T> classifier_head(const BoundNet<T>&, const Var<T>&);                         \
  template Var<T> classifier_forward(const BoundNet<T>&, const Var<T>&);                      \
  template Tensor<T> encode(const ParamSet<T>&, const Tensor<T>&, std::size_t);               \
  template Tensor<T> predict_logits(const ParamSet<T>&, const Tensor<T>&, std::size_t);       \
  template ParamSet<T> interpolate_params(const ParamSet<T>&, const ParamSet<T>&, double);    \
  template void sgd_momentum_update(Tensor<T>&, const Tensor<T>&, Tensor<T>&,                 \
                                    const SgdOptions&);                                       \
  template void sgd_momentum_step(ParamSet<T>&, std::span<const Tensor<T>>, const SgdOptions&, \
                                  MomentumState<T>&);

DANCE_INSTANTIATE_NET(float)
DANCE_INSTANTIATE_NET(double)

#undef DANCE_INSTANTIATE_NET

}  // namespace dance
