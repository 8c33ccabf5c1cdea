// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dance/augment.hpp"
#include "dance/coreset.hpp"
#include "dance/diagnostics.hpp"
#include "dance/error.hpp"
#include "dance/evaluation.hpp"
#include "fixtures.hpp"

using namespace dance;

TEST(Evaluate, RepeatsUseConsecutiveSeeds) {
  const auto d = dance::testing::tiny_patches();
  const auto syn = init_synthetic(d.train, 1, 1, 0);
  const auto spec = dance::testing::tiny_net(d.train);
  std::vector<std::uint64_t> seen;
  const auto rep = evaluate_repeats(syn, d.test, spec, EvalOptions{}, 3, 10,
                                    [&](std::uint64_t s) {
                                      seen.push_back(s);
                                      return 0.1 * static_cast<double>(s - 9);
                                    });
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{10, 11, 12}));
  EXPECT_NEAR(rep.mean, 0.2, 1e-12);
  EXPECT_NEAR(rep.std, 0.1, 1e-12);
  EXPECT_FALSE(rep.degenerate);
  EXPECT_EQ(eval_report_csv(rep), "run,seed,accuracy\n1,10,0.1\n2,11,0.2\n3,12,0.3\n");
}

TEST(Evaluate, SingleRunIsDegenerate) {
  const auto r = summarize_runs({4}, {0.5});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.std, 0.0);
  EXPECT_EQ(r.mean, 0.5);
}

TEST(Evaluate, ThreadsDoNotChangeResults) {
  const auto d = dance::testing::tiny_patches();
  const auto syn = init_synthetic(d.train, 2, 1, 0);
  const auto spec = dance::testing::tiny_net(d.train);
  EvalOptions o;
  o.epochs = 3;
  o.batch_size = 8;
  const auto a = evaluate_repeats(syn, d.test, spec, o, 2, 0, {}, 1);
  const auto b = evaluate_repeats(syn, d.test, spec, o, 2, 0, {}, 2);
  EXPECT_EQ(a.accuracies, b.accuracies);
  for (double acc : a.accuracies) {
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
}

TEST(Evaluate, EmptyTestSetIsRejected) {
  const auto d = dance::testing::tiny_patches();
  const auto model = build_convnet(dance::testing::tiny_net(d.train), 0);
  RealDataset empty = wrap_standardized(Tensor<float>({0, 1, 8, 8}), {}, 3, d.train.stats);
  EXPECT_THROW(test_accuracy(model, empty), ShapeError);
}

TEST(CutMix, FullMixLeavesBatchUnchanged) {
  Batch<float> b;
  b.images = Tensor<float>({4, 1, 6, 6});
  for (std::size_t i = 0; i < b.images.size(); ++i) b.images[i] = static_cast<float>(i);
  b.labels = {0, 1, 2, 3};
  const auto before = b.images;
  Rng rng(1);
  cutmix(b, 1.0, rng);
  EXPECT_TRUE(bit_equal(b.images, before));
  EXPECT_EQ(b.mix, 1.0);
}

TEST(CutMix, MixMatchesPastedArea) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Batch<float> b;
    b.images = Tensor<float>({3, 1, 8, 8});
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 64; ++i) b.images[n * 64 + i] = static_cast<float>(n);
    b.labels = {0, 1, 2};
    cutmix(b, rng.uniform(), rng);
    for (std::size_t n = 0; n < 3; ++n) {
      std::size_t own = 0;
      for (std::size_t i = 0; i < 64; ++i) own += b.images[n * 64 + i] == static_cast<float>(n);
      if (b.mix_labels[n] != n) {
        EXPECT_NEAR(own / 64.0, b.mix, 1e-12);
      }
    }
  }
}

// -- coresets ----------------------------------------------------------------

TEST(Coreset, IdenticalPointsTieToLowerIndex) {
  const FeatureRows rows(5, std::vector<double>{1.0, 2.0});
  EXPECT_EQ(herding_order(rows, 3), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(kcenter_order(rows, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Coreset, CollinearKCenter) {
  const FeatureRows rows{{0}, {1}, {2}, {8}, {9}};
  const auto order = kcenter_order(rows, 2);
  ASSERT_EQ(order.size(), 2u);
  EXPECT_EQ(order[0], 2u);  // mean 4 is nearest to 2
  EXPECT_EQ(order[1], 4u);  // 9 is farthest from 2
}

TEST(Coreset, HerdingFirstPickIsNearestTheMean) {
  const FeatureRows rows{{0}, {1}, {2}, {8}, {9}};
  const auto h = herding_order(rows, 5);
  EXPECT_EQ(h[0], 2u);
  std::vector<std::size_t> sorted = h;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Coreset, PermutationInvariance) {
  Rng rng(8);
  FeatureRows rows(9, std::vector<double>(3));
  for (auto& r : rows)
    for (auto& v : r) v = std::round(rng.normal() * 2) / 2;  // plenty of ties
  auto perm = rng.permutation(rows.size());
  FeatureRows shuffled;
  for (auto p : perm) shuffled.push_back(rows[p]);
  for (auto fn : {&herding_order, &kcenter_order}) {
    const auto a = fn(rows, 5), b = fn(shuffled, 5);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(rows[a[i]], shuffled[b[i]]);
  }
}

TEST(Coreset, SelectorsAgreeAtIpcOne) {
  const auto d = dance::testing::tiny_patches();
  const auto h = herding_indices(d.train, 1), k = kcenter_indices(d.train, 1);
  EXPECT_EQ(h, k);
}

TEST(Coreset, RandomSelectionIsDistinctPerClass) {
  const auto d = dance::testing::tiny_patches();
  const auto sel = random_indices(d.train, 5, 3);
  ASSERT_EQ(sel.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(std::set<std::size_t>(sel[c].begin(), sel[c].end()).size(), 5u);
    for (auto i : sel[c]) EXPECT_EQ(d.train.labels[i], c);
  }
  EXPECT_EQ(random_indices(d.train, 5, 3), sel);
  const auto syn = random_select(d.train, 5, 3);
  validate_synthetic(syn);
  EXPECT_EQ(syn.factor, 1u);
  EXPECT_THROW(random_select(d.train, 13, 3), ConfigError);
  EXPECT_THROW(herding_select(d.train, 0), ConfigError);
}

TEST(Coreset, EncoderFeaturesAreUsed) {
  const auto d = dance::testing::tiny_patches();
  const auto enc = build_convnet(dance::testing::tiny_net(d.train), 1);
  const auto a = kcenter_select(d.train, 2, &enc);
  validate_synthetic(a);
  EXPECT_EQ(a.canvases.dim(0), 6u);
}

// -- diagnostics -------------------------------------------------------------

TEST(Diagnostics, DiscrepancyIsZeroForTheFullSet) {
  const auto d = dance::testing::tiny_patches();
  const auto enc = build_convnet(dance::testing::tiny_net(d.train), 1);
  EXPECT_NEAR(feature_discrepancy(enc, d.train, d.train), 0.0, 1e-10);
  const auto syn = synthetic_as_dataset(random_select(d.train, 2, 0));
  EXPECT_GT(feature_discrepancy(enc, d.train, syn), 0.0);
}

TEST(Diagnostics, StagesAndCurve) {
  EXPECT_EQ(stage_epochs(10, 1), (std::vector<std::size_t>{10}));
  EXPECT_EQ(stage_epochs(10, 3), (std::vector<std::size_t>{0, 5, 10}));
  EXPECT_EQ(stage_epochs(9, 4), (std::vector<std::size_t>{0, 3, 6, 9}));
  const auto d = dance::testing::tiny_patches();
  TrainOptions t;
  t.epochs = 4;
  t.batch_size = 16;
  const auto curve = discrepancy_curve(random_select(d.train, 2, 0), d.train,
                                       dance::testing::tiny_net(d.train), 3, t, 1);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_EQ(curve[0].stage, 0u);
  EXPECT_EQ(curve[2].stage, 4u);
  const std::string csv = discrepancy_csv(curve);
  EXPECT_EQ(csv.rfind("stage,value\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Diagnostics, LambdaGridAndSweepEndpoints) {
  const auto grid = lambda_grid(0.1);
  ASSERT_EQ(grid.size(), 11u);
  EXPECT_EQ(grid.front(), 0.0);
  EXPECT_EQ(grid.back(), 1.0);
  EXPECT_THROW(lambda_grid(0.0), ConfigError);

  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train, 1, 3);
  const auto& e = bank.entries[0];
  const auto rows = lambda_sweep(e, d.test, grid);
  ASSERT_EQ(rows.size(), 11u);
  const auto acc = [&](const ParamSet<float>& p) {
    return accuracy(p, d.test.images, std::span<const std::uint32_t>(d.test.labels));
  };
  EXPECT_NEAR(rows.front().second, acc(e.expert), 1e-9);
  EXPECT_NEAR(rows.back().second, acc(e.init), 1e-9);
  const std::vector<double> bad{0.5, 1.5};
  EXPECT_THROW(lambda_sweep(e, d.test, bad), ConfigError);
  const std::string csv = lambda_sweep_csv(rows);
  EXPECT_EQ(csv.rfind("lambda,accuracy\n", 0), 0u);
}

TEST(Diagnostics, ExpertAccuracyOnSynthetic) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train, 2, 2);
  const double a = expert_acc_on_syn(bank, random_select(d.train, 3, 0));
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
}
