// SPDX-License-Identifier: Apache-2.0
#include "dance/augment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dance/error.hpp"
#include "dance/ops.hpp"

namespace dance {

AugmentDraw draw_augment(const MatchAugment& o, Rng& rng) {
  AugmentDraw d;
  if (o.color) {
    d.brightness = rng.uniform(o.scale_lo, o.scale_hi);
    d.contrast = rng.uniform(o.scale_lo, o.scale_hi);
  }
  if (o.crop) {
    d.dy = rng.integer(-o.max_shift, o.max_shift);
    d.dx = rng.integer(-o.max_shift, o.max_shift);
  }
  return d;
}

template <class T>
Var<T> apply_augment(const Var<T>& images, const MatchAugment& o, const AugmentDraw& d) {
  const std::size_t n = images.dim(0);
  Var<T> x = images;
  if (o.color) {
    const std::vector<double> b(n, d.brightness), c(n, d.contrast);
    x = color_jitter(x, std::span<const double>(b), std::span<const double>(c));
  }
  if (o.crop) {
    const std::vector<int> dy(n, d.dy), dx(n, d.dx);
    x = shift_crop(x, std::span<const int>(dy), std::span<const int>(dx));
  }
  return x;
}

template <class T>
std::pair<Var<T>, Var<T>> shared_augment(const Var<T>& real, const Var<T>& syn,
                                         const MatchAugment& o, Rng& rng) {
  if (!o.any()) return {real, syn};
  const AugmentDraw d = draw_augment(o, rng);
  return {apply_augment(real, o, d), apply_augment(syn, o, d)};
}

void cutmix(Batch<float>& batch, double mix, Rng& rng) {
  Tensor<float>& x = batch.images;
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  mix = std::clamp(mix, 0.0, 1.0);
  const std::vector<std::size_t> perm = rng.permutation(n);
  const double ratio = std::sqrt(1.0 - mix);
  const long ch = static_cast<long>(std::floor(static_cast<double>(h) * ratio));
  const long cw = static_cast<long>(std::floor(static_cast<double>(w) * ratio));
  const long cy = static_cast<long>(rng.index(h));
  const long cx = static_cast<long>(rng.index(w));
  const std::size_t y0 = static_cast<std::size_t>(std::clamp(cy - ch / 2, 0L, static_cast<long>(h)));
  const std::size_t y1 = static_cast<std::size_t>(std::clamp(cy + ch - ch / 2, 0L, static_cast<long>(h)));
  const std::size_t x0 = static_cast<std::size_t>(std::clamp(cx - cw / 2, 0L, static_cast<long>(w)));
  const std::size_t x1 = static_cast<std::size_t>(std::clamp(cx + cw - cw / 2, 0L, static_cast<long>(w)));
  const std::size_t area = (y1 - y0) * (x1 - x0);

  batch.mix_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) batch.mix_labels[i] = batch.labels[perm[i]];
  batch.mix = 1.0 - static_cast<double>(area) / static_cast<double>(h * w);
  if (area == 0) return;

  const Tensor<float> src = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t xx = x0; xx < x1; ++xx) x.at(i, k, y, xx) = src.at(perm[i], k, y, xx);
}

Augmenter<float> make_eval_augmenter(const EvalAugment& o) {
  if (!o.any()) return {};
  return [o](Batch<float>& batch, Rng& rng) {
    const std::size_t n = batch.images.dim(0);
    if (o.color || o.crop) {
      std::vector<double> b(n, 1.0), c(n, 1.0);
      std::vector<int> dy(n, 0), dx(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        if (o.color) {
          b[i] = rng.uniform(o.scale_lo, o.scale_hi);
          c[i] = rng.uniform(o.scale_lo, o.scale_hi);
        }
        if (o.crop) {
          dy[i] = rng.integer(-o.max_shift, o.max_shift);
          dx[i] = rng.integer(-o.max_shift, o.max_shift);
        }
      }
      // Constants only, so the tape keeps no backward state.
      Tape<float> tape;
      Var<float> x = tape.constant(std::move(batch.images));
      if (o.color) x = color_jitter(x, std::span<const double>(b), std::span<const double>(c));
      if (o.crop) x = shift_crop(x, std::span<const int>(dy), std::span<const int>(dx));
      batch.images = x.value();
    }
    if (o.cutmix) {
      const double mix = o.force_mix ? *o.force_mix : rng.uniform();  // Beta(1,1)
      cutmix(batch, mix, rng);
    }
  };
}

template Var<float> apply_augment(const Var<float>&, const MatchAugment&, const AugmentDraw&);
template Var<double> apply_augment(const Var<double>&, const MatchAugment&, const AugmentDraw&);
template std::pair<Var<float>, Var<float>> shared_augment(const Var<float>&, const Var<float>&,
                                                          const MatchAugment&, Rng&);
template std::pair<Var<double>, Var<double>> shared_augment(const Var<double>&,
                                                            const Var<double>&,
                                                            const MatchAugment&, Rng&);

}  // namespace dance
