// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dance/convnet.hpp"
#include "dance/dataset.hpp"
#include "dance/rng.hpp"
#include "dance/training.hpp"

namespace dance {

struct ExpertMeta {
  std::uint64_t seed = 0;
  std::uint32_t epochs = 0;
  std::uint32_t batch_size = 0;
  double lr = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = -1.0;  // -1 when no test split was given

  bool operator==(const ExpertMeta&) const = default;
};

/// One initial network and its trained continuation.
struct ExpertEntry {
  ParamSet<float> init;
  ParamSet<float> expert;
  ExpertMeta meta;
};

struct ExpertBank {
  ConvNetSpec spec;
  std::vector<ExpertEntry> entries;

  std::size_t size() const { return entries.size(); }
};

/// Spec matching a dataset's shape and class count.
ConvNetSpec spec_for(const RealDataset& ds, std::size_t depth, std::size_t width);

/// Throws ShapeError when the bank was built for another input shape or
/// class count.
void check_bank_matches(const ExpertBank& bank, const RealDataset& ds);

ExpertEntry pretrain_expert(const RealDataset& train, const RealDataset* test,
                            const ConvNetSpec& spec, std::uint64_t seed, const TrainOptions& opts);

/// Expert i uses seed substream "expert:i" of `seed`. Experts train
/// independently, so `threads` does not change the result.
ExpertBank build_bank(const RealDataset& train, const RealDataset* test, const ConvNetSpec& spec,
                      std::size_t count, std::uint64_t seed, const TrainOptions& opts,
                      std::size_t threads = 1);

/// "DCXB" bank file; load either returns a complete bank or throws.
void save_bank(const std::filesystem::path& path, const ExpertBank& bank);
ExpertBank load_bank(const std::filesystem::path& path);

struct MiddleEncoder {
  ParamSet<float> params;
  std::size_t expert = 0;  // 0-based entry index
  double lambda = 0.0;
};

/// lambda * init_n + (1 - lambda) * expert_n.
ParamSet<float> middle_encoder(const ExpertBank& bank, std::size_t n, double lambda);

/// n uniform over the entries, lambda uniform on [0, 1).
MiddleEncoder sample_middle_encoder(const ExpertBank& bank, Rng& rng);

}  // namespace dance
