// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dance/convnet.hpp"
#include "dance/dataset.hpp"
#include "dance/expert_bank.hpp"
#include "dance/synthetic.hpp"
#include "dance/training.hpp"

namespace dance {

struct CurvePoint {
  std::size_t stage = 0;  // training epoch of the snapshot, 0 = initialization
  double value = 0.0;
};

/// sum_c || mean enc(real_c) - mean enc(syn_c) ||^2 / feature_dim, with all
/// real examples of each class. `syn` is class-sorted and balanced.
double feature_discrepancy(const ParamSet<float>& params, const RealDataset& real,
                           const RealDataset& syn);

/// Trains a fresh ConvNet on `real` for opts.epochs epochs and evaluates
/// feature_discrepancy at `stages` evenly spaced snapshots. With two or more
/// stages the first is the initialization and the last the final epoch.
std::vector<CurvePoint> discrepancy_curve(const SyntheticSet& syn, const RealDataset& real,
                                          const ConvNetSpec& spec, std::size_t stages,
                                          const TrainOptions& opts, std::uint64_t seed);

/// Snapshot epochs used by discrepancy_curve.
std::vector<std::size_t> stage_epochs(std::size_t epochs, std::size_t stages);

/// Accuracy of interpolate(init, expert, lambda) on `test` for each grid value.
std::vector<std::pair<double, double>> lambda_sweep(const ExpertEntry& entry,
                                                    const RealDataset& test,
                                                    std::span<const double> grid);

/// 0, step, 2*step, ..., 1.
std::vector<double> lambda_grid(double step);

/// Mean over experts of their accuracy on the unfactored synthetic examples.
double expert_acc_on_syn(const ExpertBank& bank, const SyntheticSet& syn);

std::string discrepancy_csv(std::span<const CurvePoint> curve);
std::string lambda_sweep_csv(std::span<const std::pair<double, double>> rows);

}  // namespace dance
