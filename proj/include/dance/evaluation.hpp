// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dance/augment.hpp"
#include "dance/convnet.hpp"
#include "dance/dataset.hpp"
#include "dance/synthetic.hpp"
#include "dance/training.hpp"

namespace dance {

struct EvalOptions {
  std::size_t epochs = 300;
  std::size_t batch_size = 256;
  SgdOptions sgd;
  EvalAugment augment;
};

/// Fresh ConvNet (seeded by `seed`) trained on the unfactored set.
ParamSet<float> train_eval_model(const SyntheticSet& syn, const ConvNetSpec& spec,
                                 const EvalOptions& opts, std::uint64_t seed);

double test_accuracy(const ParamSet<float>& model, const RealDataset& test);

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;         // sample standard deviation
  bool degenerate = false;  // fewer than two runs, std reported as 0
  EvalOptions options;
};

/// One train+test run for a seed; returns the test accuracy.
using EvalRun = std::function<double(std::uint64_t seed)>;

EvalReport summarize_runs(std::vector<std::uint64_t> seeds, std::vector<double> accuracies);

/// Runs seeds base..base+R-1. `run` overrides the default
/// train_eval_model + test_accuracy. Runs are independent; `threads` only
/// changes wall time.
EvalReport evaluate_repeats(const SyntheticSet& syn, const RealDataset& test,
                            const ConvNetSpec& spec, const EvalOptions& opts, std::size_t repeats,
                            std::uint64_t base_seed, const EvalRun& run = {},
                            std::size_t threads = 1);

/// run,seed,accuracy
std::string eval_report_csv(const EvalReport& report);

}  // namespace dance
