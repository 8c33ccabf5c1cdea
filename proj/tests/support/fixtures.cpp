// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

namespace dance::testing {

DatasetSplit tiny_patches(std::size_t classes, std::size_t per_class, std::uint64_t seed) {
  GaussianPatchOptions o;
  o.classes = classes;
  o.train_per_class = per_class;
  o.test_per_class = per_class;
  o.resolution = 8;
  o.blobs = 2;
  o.max_shift = 1.0;
  o.seed = seed;
  return make_gaussian_patches(o);
}

ConvNetSpec tiny_net(const RealDataset& ds, std::size_t width, std::size_t depth) {
  return spec_for(ds, depth, width);
}

ExpertBank tiny_bank(const RealDataset& ds, std::size_t count, std::size_t epochs) {
  TrainOptions t;
  t.epochs = epochs;
  t.batch_size = 16;
  return build_bank(ds, nullptr, tiny_net(ds), count, 7, t);
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dance_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dance::testing
