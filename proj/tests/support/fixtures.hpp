// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "dance/condense.hpp"
#include "dance/dataset.hpp"
#include "dance/expert_bank.hpp"

namespace dance::testing {

/// Small Gaussian-patch split: `classes` classes of 8x8 images.
DatasetSplit tiny_patches(std::size_t classes = 3, std::size_t per_class = 12,
                          std::uint64_t seed = 1);

ConvNetSpec tiny_net(const RealDataset& ds, std::size_t width = 4, std::size_t depth = 1);

/// One untrained init/expert pair (expert trained for `epochs` epochs).
ExpertBank tiny_bank(const RealDataset& ds, std::size_t count = 1, std::size_t epochs = 1);

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace dance::testing
