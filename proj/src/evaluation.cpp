// SPDX-License-Identifier: Apache-2.0
#include "dance/evaluation.hpp"

#include <cmath>
#include <cstdio>

#include "dance/error.hpp"
#include "dance/parallel.hpp"

namespace dance {

ParamSet<float> train_eval_model(const SyntheticSet& syn, const ConvNetSpec& spec,
                                 const EvalOptions& opts, std::uint64_t seed) {
  if (syn.canvases.rank() != 4 || syn.canvases.dim(0) == 0)
    throw ShapeError("train_eval_model: empty synthetic set");
  ParamSet<float> model = build_convnet(spec, seed);
  auto [images, labels] = unfactor_all(syn);
  Rng rng = Rng::substream(seed, "eval.train");
  TrainOptions t{opts.epochs, opts.batch_size, opts.sgd};
  train_classifier(model, images, std::span<const std::uint32_t>(labels), t, rng,
                   make_eval_augmenter(opts.augment));
  return model;
}

double test_accuracy(const ParamSet<float>& model, const RealDataset& test) {
  if (test.size() == 0) throw ShapeError("test_accuracy: empty test set");
  return accuracy(model, test.images, std::span<const std::uint32_t>(test.labels));
}

EvalReport summarize_runs(std::vector<std::uint64_t> seeds, std::vector<double> accuracies) {
  if (accuracies.empty()) throw ShapeError("evaluation: no runs");
  EvalReport r;
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  r.mean = sum / static_cast<double>(accuracies.size());
  if (accuracies.size() < 2) {
    r.degenerate = true;
  } else {
    double sq = 0.0;
    for (double a : accuracies) sq += (a - r.mean) * (a - r.mean);
    r.std = std::sqrt(sq / static_cast<double>(accuracies.size() - 1));
  }
  r.seeds = std::move(seeds);
  r.accuracies = std::move(accuracies);
  return r;
}

EvalReport evaluate_repeats(const SyntheticSet& syn, const RealDataset& test,
                            const ConvNetSpec& spec, const EvalOptions& opts, std::size_t repeats,
                            std::uint64_t base_seed, const EvalRun& run, std::size_t threads) {
  if (repeats == 0) throw ConfigError("evaluation: repeats must be >= 1");
  std::vector<std::uint64_t> seeds(repeats);
  std::vector<double> acc(repeats);
  parallel_for(repeats, threads, [&](std::size_t i) {
    seeds[i] = base_seed + i;
    acc[i] = run ? run(seeds[i]) : test_accuracy(train_eval_model(syn, spec, opts, seeds[i]), test);
  });
  EvalReport r = summarize_runs(std::move(seeds), std::move(acc));
  r.options = opts;
  return r;
}

std::string eval_report_csv(const EvalReport& report) {
  std::string out = "run,seed,accuracy\n";
  char buf[96];
  for (std::size_t i = 0; i < report.accuracies.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%llu,%.6g\n", i + 1,
                  static_cast<unsigned long long>(report.seeds[i]), report.accuracies[i]);
    out += buf;
  }
  return out;
}

}  // namespace dance
