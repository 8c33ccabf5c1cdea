// SPDX-License-Identifier: Apache-2.0
#include "dance/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dance/error.hpp"
#include "dance/ops.hpp"

namespace dance {
namespace {

template <class T>
Batch<T> gather(const Tensor<T>& images, std::span<const std::uint32_t> labels,
                std::span<const std::size_t> idx) {
  Shape shape = images.shape();
  const std::size_t row = shape_numel(shape) / shape[0];
  shape[0] = idx.size();
  Batch<T> b;
  b.images = Tensor<T>(shape);
  b.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(images.data() + idx[i] * row, row, b.images.data() + i * row);
    b.labels[i] = labels[idx[i]];
  }
  b.mix_labels = b.labels;
  return b;
}

}  // namespace

template <class T>
TrainStats train_classifier(ParamSet<T>& params, const Tensor<T>& images,
                            std::span<const std::uint32_t> labels, const TrainOptions& opts,
                            Rng& rng, const Augmenter<T>& augment,
                            const EpochHook<T>& on_epoch) {
  if (images.rank() != 4 || images.dim(0) != labels.size())
    throw ShapeError("train_classifier: " + std::to_string(labels.size()) + " labels for images " +
                     shape_str(images.shape()));
  if (opts.batch_size == 0) throw ConfigError("train_classifier: batch_size must be >= 1");
  TrainStats stats;
  const std::size_t n = images.dim(0);
  if (n == 0 || opts.epochs == 0) return stats;

  MomentumState<T> state;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const std::vector<std::size_t> order = rng.permutation(n);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += opts.batch_size) {
      const std::size_t b1 = std::min(n, b0 + opts.batch_size);
      Batch<T> batch =
          gather(images, labels, std::span<const std::size_t>(order.data() + b0, b1 - b0));
      if (augment) augment(batch, rng);
      std::vector<Tensor<T>> grads;
      try {
        Tape<T> tape;
        BoundNet<T> net = bind(tape, params, true);
        Var<T> logits = classifier_forward(net, tape.constant(std::move(batch.images)));
        Var<T> loss = softmax_cross_entropy(logits, std::span<const std::uint32_t>(batch.labels));
        if (batch.mix != 1.0) {
          Var<T> other =
              softmax_cross_entropy(logits, std::span<const std::uint32_t>(batch.mix_labels));
          loss = add(scale(loss, batch.mix), scale(other, 1.0 - batch.mix));
        }
        loss_sum += static_cast<double>(loss.value()[0]);
        tape.backward(loss);
        grads.reserve(net.params.size());
        for (const Var<T>& p : net.params) grads.push_back(tape.take_grad(p));
      } catch (const NumericError& e) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch + 1) + ": " +
                           e.what());
      }
      sgd_momentum_step(params, std::span<const Tensor<T>>(grads), opts.sgd, state);
      ++stats.steps;
      ++batches;
    }
    stats.final_loss = loss_sum / static_cast<double>(batches);
    if (!std::isfinite(stats.final_loss))
      throw NumericError("training diverged in epoch " + std::to_string(epoch + 1));
    if (on_epoch) on_epoch(epoch + 1, params);
  }
  return stats;
}

template <class T>
double accuracy_from_logits(const Tensor<T>& logits, std::span<const std::uint32_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("accuracy: logits " + shape_str(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw ShapeError("accuracy: empty evaluation set");
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T* row = logits.data() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

template <class T>
double accuracy(const ParamSet<T>& params, const Tensor<T>& images,
                std::span<const std::uint32_t> labels) {
  return accuracy_from_logits(predict_logits(params, images), labels);
}

#define DANCE_INSTANTIATE_TRAIN(T)                                                               \
  template TrainStats train_classifier(ParamSet<T>&, const Tensor<T>&,                           \
                                       std::span<const std::uint32_t>, const TrainOptions&, Rng&, \
                                       const Augmenter<T>&, const EpochHook<T>&);                \
  template double accuracy_from_logits(const Tensor<T>&, std::span<const std::uint32_t>);        \
  template double accuracy(const ParamSet<T>&, const Tensor<T>&, std::span<const std::uint32_t>);

DANCE_INSTANTIATE_TRAIN(float)
DANCE_INSTANTIATE_TRAIN(double)

#undef DANCE_INSTANTIATE_TRAIN

}  // namespace dance
