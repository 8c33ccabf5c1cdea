// SPDX-License-Identifier: Apache-2.0
#pragma once

// Learnable condensed set. Canvas rows are grouped by class: rows
// [c*IPC, (c+1)*IPC) belong to class c. With factor l every canvas holds an
// l x l grid of mini-images that are upsampled back to full size on use.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "dance/autodiff.hpp"
#include "dance/dataset.hpp"

namespace dance {

struct SyntheticSet {
  Tensor<float> canvases;  // [K*IPC, C, H, W]
  std::vector<std::uint32_t> labels;
  std::size_t classes = 0;
  std::size_t ipc = 0;
  std::size_t factor = 1;
  NormStats stats;

  std::size_t channels() const { return canvases.dim(1); }
  std::size_t height() const { return canvases.dim(2); }
  std::size_t width() const { return canvases.dim(3); }
  std::size_t unfactored_count() const { return canvases.dim(0) * factor * factor; }
  std::size_t per_class_unfactored() const { return ipc * factor * factor; }
};

/// Class-sorted labels with `ipc` rows per class.
std::vector<std::uint32_t> balanced_labels(std::size_t classes, std::size_t ipc);

/// Each grid cell is a distinct real image of the class (without
/// replacement until the class is exhausted), block-averaged to cell size.
SyntheticSet init_synthetic(const RealDataset& ds, std::size_t ipc, std::size_t factor,
                            std::uint64_t seed);

/// Cells of `canvases` upsampled to full size: row n*l*l + i*l + j is cell
/// (i, j) of canvas n. Identity when l == 1.
template <class T>
Var<T> unfactor(const Var<T>& canvases, std::size_t factor);

/// Labels of unfactor() output for the given canvas labels.
std::vector<std::uint32_t> unfactored_labels(std::span<const std::uint32_t> labels,
                                             std::size_t factor);

/// Whole set unfactored, without a tape.
std::pair<Tensor<float>, std::vector<std::uint32_t>> unfactor_all(const SyntheticSet& syn);

/// Unfactored set as a dataset (for training and coreset-style use).
RealDataset synthetic_as_dataset(const SyntheticSet& syn);

/// Checks the class-sorted layout and factor divisibility.
void validate_synthetic(const SyntheticSet& syn);

/// Container file plus footer: factor u8, IPC u32, statistics.
void save_synthetic(const std::filesystem::path& path, const SyntheticSet& syn);
SyntheticSet load_synthetic(const std::filesystem::path& path);

/// Binary PPM grid, one row per class, IPC canvases per row, de-standardized
/// and clamped to [0, 255].
void export_ppm(const std::filesystem::path& path, const SyntheticSet& syn);

}  // namespace dance
