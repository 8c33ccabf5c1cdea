// SPDX-License-Identifier: Apache-2.0
#include "dance/condense.hpp"

#include <chrono>
#include <cstdio>
#include <string>

#include "dance/error.hpp"
#include "dance/kernels.hpp"
#include "dance/ops.hpp"

namespace dance {

template <class T>
FeatureFn<T> encoder_fn(Tape<T>& tape, const ParamSet<T>& params) {
  BoundNet<T> net = bind(tape, params, false);
  return [net](const Var<T>& x) { return encoder_forward(net, x); };
}

template <class T>
Var<T> matching_loss(const FeatureFn<T>& phi, std::span<const Tensor<T>> real_per_class,
                     const Var<T>& syn, const MatchAugment& augment, Rng* aug_rng) {
  const std::size_t k = real_per_class.size();
  if (k == 0) throw ShapeError("matching_loss: no classes");
  if (syn.dim(0) % k != 0 || syn.dim(0) == 0)
    throw ShapeError("matching_loss: " + std::to_string(syn.dim(0)) +
                     " synthetic rows cannot be split evenly over " + std::to_string(k) +
                     " classes");
  const std::size_t m = syn.dim(0) / k;
  Tape<T>& tape = syn.tape();
  Var<T> total;

  auto accumulate = [&](const Var<T>& term) { total = total.valid() ? add(total, term) : term; };

  if (augment.any()) {
    if (!aug_rng) throw ShapeError("matching_loss: augmentation needs a random stream");
    for (std::size_t c = 0; c < k; ++c) {
      if (real_per_class[c].dim(0) == 0) throw ShapeError("matching_loss: empty real batch");
      auto [r, s] = shared_augment(tape.constant(real_per_class[c]),
                                   slice_rows(syn, c * m, (c + 1) * m), augment, *aug_rng);
      accumulate(mean_embedding_sq_dist(phi(r), phi(s)));
    }
    return total;
  }

  // The embedding is per-sample, so all classes share one forward pass.
  std::vector<std::size_t> offsets{0};
  for (const auto& r : real_per_class) {
    if (r.dim(0) == 0) throw ShapeError("matching_loss: empty real batch");
    offsets.push_back(offsets.back() + r.dim(0));
  }
  const Var<T> real_feat = phi(tape.constant(concat_rows(real_per_class)));
  const Var<T> syn_feat = phi(syn);
  for (std::size_t c = 0; c < k; ++c)
    accumulate(mean_embedding_sq_dist(slice_rows(real_feat, offsets[c], offsets[c + 1]),
                                      slice_rows(syn_feat, c * m, (c + 1) * m)));
  return total;
}

template <class T>
Var<T> calib_loss(const ParamSet<T>& expert, const Var<T>& canvases, std::size_t factor,
                  std::span<const std::uint32_t> canvas_labels) {
  const BoundNet<T> net = bind(canvases.tape(), expert, false);
  const std::vector<std::uint32_t> labels = unfactored_labels(canvas_labels, factor);
  const Var<T> logits = classifier_forward(net, unfactor(canvases, factor));
  return softmax_cross_entropy(logits, std::span<const std::uint32_t>(labels));
}

double calibration_step(const ParamSet<float>& expert, SyntheticSet& syn, double lr) {
  Tape<float> tape;
  const Var<float> canvases = tape.leaf(syn.canvases, true);
  const Var<float> loss =
      calib_loss(expert, canvases, syn.factor, std::span<const std::uint32_t>(syn.labels));
  const double before = static_cast<double>(loss.value()[0]);
  tape.backward(loss);
  Tensor<float> grad = tape.take_grad(canvases);
  Tensor<float> velocity(grad.shape());
  sgd_momentum_update(syn.canvases, grad, velocity, SgdOptions{lr, 0.0, 0.0});
  return before;
}

std::vector<Tensor<float>> draw_real_batches(const RealDataset& ds, std::size_t batch,
                                             std::span<Rng> streams) {
  if (streams.size() != ds.classes) throw ShapeError("draw_real_batches: one stream per class");
  std::vector<Tensor<float>> out;
  out.reserve(ds.classes);
  for (std::size_t c = 0; c < ds.classes; ++c)
    out.push_back(sample_class_batch(ds, c, batch, streams[c]));
  return out;
}

namespace {

std::vector<Tensor<float>> draw_from(const RealDataset& ds, std::size_t batch, Rng& rng) {
  std::vector<Tensor<float>> out;
  for (std::size_t c = 0; c < ds.classes; ++c) out.push_back(sample_class_batch(ds, c, batch, rng));
  return out;
}

void check_layout(const SyntheticSet& syn, const RealDataset& ds, const Var<float>& canvases) {
  if (syn.classes != ds.classes || syn.channels() != ds.channels() ||
      syn.height() != ds.height() || syn.width() != ds.width())
    throw ShapeError("synthetic set does not match the real dataset layout");
  if (canvases.shape() != syn.canvases.shape())
    throw ShapeError("canvas variable does not match the synthetic set");
}

}  // namespace

Var<float> dm_loss(const FeatureFn<float>& phi, const RealDataset& ds, const Var<float>& canvases,
                   const SyntheticSet& syn, std::size_t batch, Rng& rng,
                   const MatchAugment& augment) {
  check_layout(syn, ds, canvases);
  const auto real = draw_from(ds, batch, rng);
  return matching_loss(phi, std::span<const Tensor<float>>(real), unfactor(canvases, syn.factor),
                       augment, &rng);
}

PltdaLoss pltda_loss(const ExpertBank& bank, const RealDataset& ds, const Var<float>& canvases,
                     const SyntheticSet& syn, std::size_t batch, Rng& rng,
                     const MatchAugment& augment) {
  check_bank_matches(bank, ds);
  MiddleEncoder mid = sample_middle_encoder(bank, rng);
  PltdaLoss out;
  out.expert = mid.expert;
  out.lambda = mid.lambda;
  out.loss = dm_loss(encoder_fn(canvases.tape(), mid.params), ds, canvases, syn, batch, rng, augment);
  return out;
}

// ---------------------------------------------------------------------------

void CondenseConfig::validate() const {
  if (iterations == 0) throw ConfigError("iterations must be >= 1");
  if (calib_interval == 0) throw ConfigError("calib_interval must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (ipc == 0) throw ConfigError("ipc must be >= 1");
  if (factor == 0) throw ConfigError("factor must be >= 1");
  if (real_batch == 0) throw ConfigError("real_batch must be >= 1");
  if (checkpoint_every > 0 && checkpoint_path.empty())
    throw ConfigError("checkpoint_every needs a checkpoint path");
}

double effective_lr(const CondenseConfig& cfg) { return cfg.lr * static_cast<double>(cfg.ipc); }

namespace {

using Clock = std::chrono::steady_clock;

struct Matching {
  Var<float> loss;
  std::optional<double> lambda;
  std::optional<std::size_t> expert;
};

/// Shared loop: `match` builds the matching loss on a fresh tape, `calib`
/// (optional) the calibration loss for the same iteration.
template <class MatchFn, class CalibFn>
CondenseResult run_loop(const CondenseConfig& cfg, SyntheticSet syn, const ProgressSink& sink,
                        MatchFn&& match, CalibFn&& calib, bool with_calibration) {
  CondenseResult res;
  const double lr = effective_lr(cfg);
  const SgdOptions pixel{lr, cfg.momentum, 0.0};
  Tensor<float> velocity(syn.canvases.shape());
  double total_ms = 0.0;

  auto step = [&](auto&& build, std::size_t iter, const char* what) {
    Tape<float> tape;
    Var<float> canvases = tape.leaf(syn.canvases, true);
    double value;
    Tensor<float> grad;
    try {
      Var<float> loss = build(tape, canvases);
      value = static_cast<double>(loss.value()[0]);
      tape.backward(loss);
      grad = tape.take_grad(canvases);
      if (!kernels::all_finite(grad.data(), grad.size()))
        throw NumericError("non-finite gradient");
    } catch (const NumericError& e) {
      throw NumericError(std::string(what) + " loss diverged at iteration " +
                         std::to_string(iter) + ": " + e.what());
    }
    sgd_momentum_update(syn.canvases, grad, velocity, pixel);
    return value;
  };

  for (std::size_t i = 1; i <= cfg.iterations; ++i) {
    const auto t0 = Clock::now();
    IterRecord rec;
    rec.iter = i;
    Matching info;
    rec.loss_match = step(
        [&](Tape<float>& tape, const Var<float>& canvases) {
          info = match(i, tape, canvases);
          return info.loss;
        },
        i, "matching");
    rec.lambda = info.lambda;
    rec.expert = info.expert;
    if (with_calibration && cfg.calib_steps > 0 && i % cfg.calib_interval == 0) {
      for (std::size_t s = 0; s < cfg.calib_steps; ++s) {
        const double v = step(
            [&](Tape<float>&, const Var<float>& canvases) { return calib(info, canvases); }, i,
            "calibration");
        if (s == 0) rec.loss_calib = v;
      }
      ++res.calibrations;
    }
    rec.ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    total_ms += rec.ms;
    if (cfg.checkpoint_every > 0 && i % cfg.checkpoint_every == 0)
      save_synthetic(cfg.checkpoint_path, syn);
    if (sink) sink(rec);
    res.records.push_back(rec);
  }
  res.mean_ms = total_ms / static_cast<double>(cfg.iterations);
  res.syn = std::move(syn);
  return res;
}

SyntheticSet starting_set(const CondenseConfig& cfg, const RealDataset& ds,
                          const CondenseHooks& hooks) {
  if (hooks.initial) {
    validate_synthetic(*hooks.initial);
    return *hooks.initial;
  }
  return init_synthetic(ds, cfg.ipc, cfg.factor, cfg.seed);
}

std::vector<Rng> class_streams(std::uint64_t seed, std::size_t classes) {
  std::vector<Rng> s;
  for (std::size_t c = 0; c < classes; ++c)
    s.push_back(Rng::substream(seed, "batch:" + std::to_string(c)));
  return s;
}

}  // namespace

CondenseResult dance_condense(const CondenseConfig& cfg, const RealDataset& ds,
                              const ExpertBank& bank, const ProgressSink& sink,
                              const CondenseHooks& hooks) {
  cfg.validate();
  check_bank_matches(bank, ds);
  if (bank.size() == 0) throw ConfigError("dance_condense: empty expert bank");
  SyntheticSet syn = starting_set(cfg, ds, hooks);
  const std::size_t factor = syn.factor;
  const std::vector<std::uint32_t> labels = syn.labels;

  Rng lambda_rng = Rng::substream(cfg.seed, "lambda");
  Rng expert_rng = Rng::substream(cfg.seed, "expert");
  Rng calib_rng = Rng::substream(cfg.seed, "calib");
  Rng aug_rng = Rng::substream(cfg.seed, "augment");
  std::vector<Rng> batch_rngs = class_streams(cfg.seed, ds.classes);

  auto match = [&](std::size_t iter, Tape<float>& tape, const Var<float>& canvases) {
    Matching m;
    const std::size_t n = expert_rng.index(bank.size());
    const double lambda = hooks.force_lambda ? hooks.force_lambda(iter) : lambda_rng.uniform();
    m.expert = n;
    m.lambda = lambda;
    const ParamSet<float> mid = middle_encoder(bank, n, lambda);
    const auto real = draw_real_batches(ds, cfg.real_batch, batch_rngs);
    m.loss = matching_loss(encoder_fn(tape, mid), std::span<const Tensor<float>>(real),
                           unfactor(canvases, factor), cfg.augment, &aug_rng);
    return m;
  };
  auto calib = [&](const Matching& m, const Var<float>& canvases) {
    const std::size_t n =
        cfg.calib_expert == CalibExpert::SameAsMatching ? *m.expert : calib_rng.index(bank.size());
    return calib_loss(bank.entries[n].expert, canvases, factor,
                      std::span<const std::uint32_t>(labels));
  };
  return run_loop(cfg, std::move(syn), sink, match, calib, true);
}

CondenseResult dm_condense(const CondenseConfig& cfg, const RealDataset& ds,
                           const ConvNetSpec& spec, const ProgressSink& sink,
                           const CondenseHooks& hooks) {
  cfg.validate();
  if (!hooks.dm_encoder &&
      (spec.in_channels != ds.channels() || spec.image_height != ds.height() ||
       spec.image_width != ds.width()))
    throw ShapeError("dm_condense: " + spec.describe() + " does not match dataset images");
  SyntheticSet syn = starting_set(cfg, ds, hooks);
  const std::size_t factor = syn.factor;

  Rng encoder_rng = Rng::substream(cfg.seed, "encoder");
  Rng aug_rng = Rng::substream(cfg.seed, "augment");
  std::vector<Rng> batch_rngs = class_streams(cfg.seed, ds.classes);

  auto match = [&](std::size_t iter, Tape<float>& tape, const Var<float>& canvases) {
    Matching m;
    FeatureFn<float> phi;
    if (hooks.dm_encoder) {
      phi = hooks.dm_encoder(iter, tape);
    } else {
      phi = encoder_fn(tape, build_convnet(spec, encoder_rng.next_u64()));
    }
    const auto real = draw_real_batches(ds, cfg.real_batch, batch_rngs);
    m.loss = matching_loss(phi, std::span<const Tensor<float>>(real), unfactor(canvases, factor),
                           cfg.augment, &aug_rng);
    return m;
  };
  auto no_calib = [](const Matching&, const Var<float>& canvases) { return canvases; };
  return run_loop(cfg, std::move(syn), sink, match, no_calib, false);
}

std::string progress_csv(std::span<const IterRecord> records) {
  std::string out = "iter,loss_pltda,loss_calib,lambda,expert_n,ms_per_iter\n";
  char buf[64];
  for (const IterRecord& r : records) {
    out += std::to_string(r.iter);
    std::snprintf(buf, sizeof buf, ",%.6g,", r.loss_match);
    out += buf;
    if (r.loss_calib) {
      std::snprintf(buf, sizeof buf, "%.6g", *r.loss_calib);
      out += buf;
    }
    out += ',';
    if (r.lambda) {
      std::snprintf(buf, sizeof buf, "%.6g", *r.lambda);
      out += buf;
    }
    out += ',';
    if (r.expert) out += std::to_string(*r.expert + 1);
    std::snprintf(buf, sizeof buf, ",%.6g\n", r.ms);
    out += buf;
  }
  return out;
}

#define DANCE_INSTANTIATE_COND(T)                                                          \
  template FeatureFn<T> encoder_fn(Tape<T>&, const ParamSet<T>&);                          \
  template Var<T> matching_loss(const FeatureFn<T>&, std::span<const Tensor<T>>,           \
                                const Var<T>&, const MatchAugment&, Rng*);                 \
  template Var<T> calib_loss(const ParamSet<T>&, const Var<T>&, std::size_t,               \
                             std::span<const std::uint32_t>);

DANCE_INSTANTIATE_COND(float)
DANCE_INSTANTIATE_COND(double)

#undef DANCE_INSTANTIATE_COND

}  // namespace dance
