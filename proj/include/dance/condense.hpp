// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dance/augment.hpp"
#include "dance/convnet.hpp"
#include "dance/dataset.hpp"
#include "dance/expert_bank.hpp"
#include "dance/synthetic.hpp"

namespace dance {

/// Embedding used by the matching losses. Must treat samples independently
/// (the losses may evaluate it on several classes at once).
template <class T>
using FeatureFn = std::function<Var<T>(const Var<T>& images)>;

/// Trunk of `params` bound as constants on `tape`.
template <class T>
FeatureFn<T> encoder_fn(Tape<T>& tape, const ParamSet<T>& params);

/// sum over classes of || mean phi(real_c) - mean phi(syn_c) ||^2. `syn` holds
/// the unfactored synthetic examples, class-sorted with equal counts per
/// class. With matching augmentation enabled each class gets its own draw,
/// shared by its real and synthetic batch.
template <class T>
Var<T> matching_loss(const FeatureFn<T>& phi, std::span<const Tensor<T>> real_per_class,
                     const Var<T>& syn, const MatchAugment& augment = {}, Rng* aug_rng = nullptr);

/// Cross-entropy of the expert's logits on every unfactored example of
/// `canvases` against the canvas labels.
template <class T>
Var<T> calib_loss(const ParamSet<T>& expert, const Var<T>& canvases, std::size_t factor,
                  std::span<const std::uint32_t> canvas_labels);

/// A single calibration update from rest (no momentum history): one
/// gradient step of size `lr` on calib_loss. Returns the loss before it.
double calibration_step(const ParamSet<float>& expert, SyntheticSet& syn, double lr);

/// One real batch per class, class c drawn from streams[c].
std::vector<Tensor<float>> draw_real_batches(const RealDataset& ds, std::size_t batch,
                                             std::span<Rng> streams);

/// Matching loss of the whole synthetic set under `phi`.
Var<float> dm_loss(const FeatureFn<float>& phi, const RealDataset& ds, const Var<float>& canvases,
                   const SyntheticSet& syn, std::size_t batch, Rng& rng,
                   const MatchAugment& augment = {});

struct PltdaLoss {
  Var<float> loss;
  std::size_t expert = 0;
  double lambda = 0.0;
};

/// Matching loss under a middle encoder sampled from the bank.
PltdaLoss pltda_loss(const ExpertBank& bank, const RealDataset& ds, const Var<float>& canvases,
                     const SyntheticSet& syn, std::size_t batch, Rng& rng,
                     const MatchAugment& augment = {});

enum class CalibExpert { SameAsMatching, FreshDraw };

struct CondenseConfig {
  std::size_t iterations = 20000;
  double lr = 0.01;  // scaled by IPC, see effective_lr()
  double momentum = 0.9;
  std::size_t calib_interval = 1;
  std::size_t calib_steps = 1;  // 0 disables calibration
  CalibExpert calib_expert = CalibExpert::SameAsMatching;
  std::size_t ipc = 10;
  std::size_t factor = 2;
  std::size_t real_batch = 128;
  MatchAugment augment;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables checkpoints
  std::filesystem::path checkpoint_path;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

double effective_lr(const CondenseConfig& cfg);

struct IterRecord {
  std::size_t iter = 0;  // 1-based
  double loss_match = 0.0;
  std::optional<double> loss_calib;
  std::optional<double> lambda;
  std::optional<std::size_t> expert;  // 0-based
  double ms = 0.0;
};

using ProgressSink = std::function<void(const IterRecord&)>;

/// Test-only overrides; never reachable from configuration files.
struct CondenseHooks {
  std::function<double(std::size_t iter)> force_lambda;
  /// DM baseline: embedding for iteration `iter` instead of a fresh ConvNet.
  std::function<FeatureFn<float>(std::size_t iter, Tape<float>& tape)> dm_encoder;
  /// Starting set instead of init_synthetic.
  std::optional<SyntheticSet> initial;
};

struct CondenseResult {
  SyntheticSet syn;
  std::vector<IterRecord> records;
  std::size_t calibrations = 0;
  double mean_ms = 0.0;
};

CondenseResult dance_condense(const CondenseConfig& cfg, const RealDataset& ds,
                              const ExpertBank& bank, const ProgressSink& sink = {},
                              const CondenseHooks& hooks = {});

/// DM baseline: a freshly initialised `spec` ConvNet every iteration, no
/// calibration.
CondenseResult dm_condense(const CondenseConfig& cfg, const RealDataset& ds,
                           const ConvNetSpec& spec, const ProgressSink& sink = {},
                           const CondenseHooks& hooks = {});

/// iter,loss_pltda,loss_calib,lambda,expert_n,ms_per_iter (expert_n 1-based).
std::string progress_csv(std::span<const IterRecord> records);

}  // namespace dance
