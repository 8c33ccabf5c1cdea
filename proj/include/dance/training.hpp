// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dance/convnet.hpp"
#include "dance/rng.hpp"
#include "dance/tensor.hpp"

namespace dance {

struct TrainOptions {
  std::size_t epochs = 60;
  std::size_t batch_size = 256;
  SgdOptions sgd;
};

/// One minibatch. After augmentation the loss is
///   mix * CE(logits, labels) + (1 - mix) * CE(logits, mix_labels)
/// which reduces to plain cross-entropy when mix == 1.
template <class T>
struct Batch {
  Tensor<T> images;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint32_t> mix_labels;
  double mix = 1.0;
};

template <class T>
using Augmenter = std::function<void(Batch<T>&, Rng&)>;

/// Called after each completed epoch (1-based) with the current parameters.
template <class T>
using EpochHook = std::function<void(std::size_t epoch, const ParamSet<T>& params)>;

struct TrainStats {
  std::size_t steps = 0;
  double final_loss = 0.0;  // mean loss over the last epoch
};

/// Minibatch SGD with momentum and cross-entropy on shuffled epochs. The
/// last partial batch of an epoch is kept. A non-finite loss raises
/// NumericError naming the epoch.
template <class T>
TrainStats train_classifier(ParamSet<T>& params, const Tensor<T>& images,
                            std::span<const std::uint32_t> labels, const TrainOptions& opts,
                            Rng& rng, const Augmenter<T>& augment = {},
                            const EpochHook<T>& on_epoch = {});

/// Argmax accuracy; ties go to the lower class index.
template <class T>
double accuracy_from_logits(const Tensor<T>& logits, std::span<const std::uint32_t> labels);

template <class T>
double accuracy(const ParamSet<T>& params, const Tensor<T>& images,
                std::span<const std::uint32_t> labels);

}  // namespace dance
