// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dance/binary_io.hpp"
#include "dance/rng.hpp"
#include "dance/tensor.hpp"

namespace dance {

/// Per-channel statistics of [0,1]-scaled pixels.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> std;

  std::size_t channels() const { return mean.size(); }
  bool operator==(const NormStats&) const = default;
};

struct RealDataset {
  Tensor<float> images;  // [M, C, H, W], standardized
  std::vector<std::uint32_t> labels;
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> class_index;
  NormStats stats;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
};

NormStats compute_stats(const Tensor<float>& pixels01);
void standardize(Tensor<float>& images, const NormStats& stats);
/// Back to the [0,1] pixel scale (no clamping).
Tensor<float> destandardize(const Tensor<float>& images, const NormStats& stats);

std::vector<std::vector<std::size_t>> build_class_index(std::span<const std::uint32_t> labels,
                                                        std::size_t classes);

/// Standardizes [0,1] pixels with `stats`, or with their own statistics when
/// none are given, and builds the class index.
RealDataset make_dataset(Tensor<float> pixels01, std::vector<std::uint32_t> labels,
                         std::size_t classes, const NormStats* stats = nullptr);

/// Dataset already in standardized form (container files, synthetic sets).
RealDataset wrap_standardized(Tensor<float> images, std::vector<std::uint32_t> labels,
                              std::size_t classes, NormStats stats);

/// MNIST-family IDX pair (u8 images, magic 0x803; u8 labels, magic 0x801).
/// Test splits pass the training statistics.
RealDataset load_idx(const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path, const NormStats* stats = nullptr);

/// Native "DCDS" container. f32 tensors are stored as-is followed by a
/// statistics trailer; on load, f32 data without a trailer and u8 data are
/// treated as raw pixels and standardized.
void save_container(const std::filesystem::path& path, const RealDataset& ds);
RealDataset load_container(const std::filesystem::path& path, const NormStats* stats = nullptr);

/// Container framing alone. classes == 0 writes an unlabeled tensor.
void write_container(ByteWriter& w, const Tensor<float>& images,
                     std::span<const std::uint32_t> labels, std::size_t classes);
void write_stats(ByteWriter& w, const NormStats& stats);
struct ContainerBody {
  Tensor<float> images;
  std::vector<std::uint32_t> labels;
  std::size_t classes = 0;
  bool raw_u8 = false;
};
ContainerBody read_container(ByteReader& r);
NormStats read_stats(ByteReader& r, std::size_t channels);

/// B distinct examples of class c when B <= class size, otherwise B draws
/// with replacement. Returns dataset positions.
std::vector<std::size_t> sample_class_indices(const RealDataset& ds, std::size_t c,
                                              std::size_t batch, Rng& rng);
Tensor<float> gather_rows(const Tensor<float>& images, std::span<const std::size_t> idx);
Tensor<float> sample_class_batch(const RealDataset& ds, std::size_t c, std::size_t batch,
                                 Rng& rng);

/// Images of one class in dataset order.
Tensor<float> class_images(const RealDataset& ds, std::size_t c);

struct GaussianPatchOptions {
  std::size_t classes = 10;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 500;
  std::size_t channels = 1;
  std::size_t resolution = 16;
  std::size_t blobs = 3;
  double noise = 0.25;        // per-pixel Gaussian noise (pixel scale)
  double max_shift = 2.0;     // per-sample translation of the template, pixels
  double distractor = 0.5;    // amplitude bound of one class-independent blob
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  RealDataset train;
  RealDataset test;
};

/// Class templates made of a few Gaussian blobs; each sample is its class
/// template jittered in position and amplitude, plus a random distractor
/// blob and pixel noise. The test split uses the training statistics.
DatasetSplit make_gaussian_patches(const GaussianPatchOptions& opts);

}  // namespace dance
