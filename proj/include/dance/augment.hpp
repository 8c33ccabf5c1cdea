// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <utility>

#include "dance/autodiff.hpp"
#include "dance/rng.hpp"
#include "dance/training.hpp"

namespace dance {

// ---------------------------------------------------------------------------
// Matching-time augmentation: one parameter draw shared by the real and the
// synthetic batch of a class. Off by default.

struct MatchAugment {
  bool color = false;
  bool crop = false;
  double scale_lo = 0.6;
  double scale_hi = 1.4;
  int max_shift = 4;

  bool any() const { return color || crop; }
};

struct AugmentDraw {
  double brightness = 1.0;
  double contrast = 1.0;
  int dy = 0;
  int dx = 0;
};

/// Draws only for enabled transforms, so switching one off does not change
/// the draws of the other.
AugmentDraw draw_augment(const MatchAugment& opts, Rng& rng);

/// Applies the draw to every row; differentiable through the tape.
template <class T>
Var<T> apply_augment(const Var<T>& images, const MatchAugment& opts, const AugmentDraw& draw);

template <class T>
std::pair<Var<T>, Var<T>> shared_augment(const Var<T>& real, const Var<T>& syn,
                                         const MatchAugment& opts, Rng& rng);

// ---------------------------------------------------------------------------
// Evaluation-training pipeline: colour jitter -> shift crop -> CutMix.

struct EvalAugment {
  bool color = true;
  bool crop = true;
  bool cutmix = true;
  double scale_lo = 0.6;
  double scale_hi = 1.4;
  int max_shift = 4;
  /// Test hook: fixes the CutMix coefficient instead of drawing Beta(1,1).
  std::optional<double> force_mix;

  bool any() const { return color || crop || cutmix; }
};

/// In-place CutMix: a box with area fraction 1 - mix is pasted from a
/// shuffled copy of the batch; mix is then recomputed from the clipped box.
void cutmix(Batch<float>& batch, double mix, Rng& rng);

Augmenter<float> make_eval_augmenter(const EvalAugment& opts);

}  // namespace dance
