// SPDX-License-Identifier: Apache-2.0
#pragma once
// Coreset baselines. Selections come back as factor-1 synthetic sets so they
// flow through the same evaluation path as condensed sets.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dance/convnet.hpp"
#include "dance/dataset.hpp"
#include "dance/synthetic.hpp"

namespace dance {

/// Row-major feature matrix of one class, one row per example.
using FeatureRows = std::vector<std::vector<double>>;

/// Greedy herding order over `rows`: each step takes the row minimizing
/// || mu - mean(selected + row) ||. Ties: objective, then lexicographically
/// smaller row, then lower position.
std::vector<std::size_t> herding_order(const FeatureRows& rows, std::size_t k);

/// Greedy k-center: first the row nearest the mean, then repeatedly the row
/// farthest from its nearest selected center. Same tie rule as herding
/// (larger distance wins).
std::vector<std::size_t> kcenter_order(const FeatureRows& rows, std::size_t k);

/// Mean of `rows`, summed in lexicographic row order so the result does not
/// depend on the order of the examples.
std::vector<double> canonical_mean(const FeatureRows& rows);

/// Per-class dataset indices, class-major.
using Selection = std::vector<std::vector<std::size_t>>;

Selection random_indices(const RealDataset& ds, std::size_t ipc, std::uint64_t seed);
/// `encoder` null selects on raw pixels.
Selection herding_indices(const RealDataset& ds, std::size_t ipc,
                          const ParamSet<float>* encoder = nullptr);
Selection kcenter_indices(const RealDataset& ds, std::size_t ipc,
                          const ParamSet<float>* encoder = nullptr);

SyntheticSet selection_to_synthetic(const RealDataset& ds, const Selection& sel);

SyntheticSet random_select(const RealDataset& ds, std::size_t ipc, std::uint64_t seed);
SyntheticSet herding_select(const RealDataset& ds, std::size_t ipc,
                            const ParamSet<float>* encoder = nullptr);
SyntheticSet kcenter_select(const RealDataset& ds, std::size_t ipc,
                            const ParamSet<float>* encoder = nullptr);

}  // namespace dance
