// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dance/binary_io.hpp"
#include "dance/condense.hpp"
#include "dance/error.hpp"
#include "dance/ops.hpp"
#include "fixtures.hpp"

using namespace dance;

namespace {

CondenseConfig small_cfg(std::size_t iterations = 4) {
  CondenseConfig c;
  c.iterations = iterations;
  c.ipc = 2;
  c.factor = 2;
  c.real_batch = 6;
  c.seed = 5;
  return c;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(Synthetic, InitCellsAreBlockAveragedClassImages) {
  const auto d = dance::testing::tiny_patches();
  const auto syn = init_synthetic(d.train, 2, 2, 1);
  validate_synthetic(syn);
  EXPECT_EQ(syn.canvases.shape(), (Shape{6, 1, 8, 8}));
  EXPECT_EQ(syn.labels, (std::vector<std::uint32_t>{0, 0, 1, 1, 2, 2}));
  // Canvas 2 (class 1), cell (0, 0) pixel (0, 0) must equal the 2x2 block
  // average of some class-1 image.
  const float v = syn.canvases.at(2, 0, 0, 0);
  bool found = false;
  for (auto i : d.train.class_index[1]) {
    const auto& x = d.train.images;
    const float avg = (x.at(i, 0, 0, 0) + x.at(i, 0, 0, 1) + x.at(i, 0, 1, 0) + x.at(i, 0, 1, 1)) / 4;
    found |= std::abs(avg - v) < 1e-6f;
  }
  EXPECT_TRUE(found);
  EXPECT_TRUE(bit_equal(init_synthetic(d.train, 2, 2, 1).canvases, syn.canvases));
  EXPECT_THROW(init_synthetic(d.train, 2, 3, 1), ConfigError);
  EXPECT_THROW(init_synthetic(d.train, 0, 1, 1), ConfigError);
}

TEST(Synthetic, UnfactorUpsamplesEachCell) {
  Tensor<float> c({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) c[i] = static_cast<float>(i);
  Tape<float> tape;
  const auto u = unfactor(tape.constant(c), 2).value();
  ASSERT_EQ(u.shape(), (Shape{4, 1, 4, 4}));
  // Cell (1, 1) holds {10, 11, 14, 15}; its upsampled mean stays 12.5.
  double mean = 0;
  for (std::size_t i = 0; i < 16; ++i) mean += u[3 * 16 + i];
  EXPECT_NEAR(mean / 16, 12.5, 1e-5);
  EXPECT_EQ(unfactored_labels(std::vector<std::uint32_t>{0, 1}, 2),
            (std::vector<std::uint32_t>{0, 0, 0, 0, 1, 1, 1, 1}));
  EXPECT_TRUE(bit_equal(unfactor(tape.constant(c), 1).value(), c));
}

TEST(Synthetic, SaveLoadAndPpm) {
  const auto d = dance::testing::tiny_patches();
  const auto syn = init_synthetic(d.train, 2, 2, 1);
  const auto dir = dance::testing::scratch_dir("syn");
  save_synthetic(dir / "s.dcsyn", syn);
  const auto back = load_synthetic(dir / "s.dcsyn");
  EXPECT_TRUE(bit_equal(back.canvases, syn.canvases));
  EXPECT_EQ(back.ipc, 2u);
  EXPECT_EQ(back.factor, 2u);
  EXPECT_EQ(back.stats, syn.stats);
  auto bytes = read_file(dir / "s.dcsyn");
  bytes.pop_back();
  write_file_atomic(dir / "cut", bytes);
  EXPECT_THROW(load_synthetic(dir / "cut"), IoError);

  export_ppm(dir / "s.ppm", syn);
  const auto ppm = read_file(dir / "s.ppm");
  const std::string head(ppm.begin(), ppm.begin() + 13);
  EXPECT_EQ(head, "P6\n19 28\n255\n");  // 2*(8+1)+1 by 3*(8+1)+1
  EXPECT_EQ(ppm.size(), 13u + 19u * 28u * 3u);
}

TEST(Condense, ValidateRejectsBadConfig) {
  auto c = small_cfg();
  EXPECT_NO_THROW(c.validate());
  c.calib_interval = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_cfg();
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_cfg();
  c.iterations = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_cfg();
  c.checkpoint_every = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_DOUBLE_EQ(effective_lr(small_cfg()), 0.02);
}

TEST(Condense, CalibrationSchedule) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train);
  for (auto [iters, interval] : {std::pair{6u, 1u}, {7u, 3u}, {5u, 5u}}) {
    auto c = small_cfg(iters);
    c.calib_interval = interval;
    std::size_t sunk = 0;
    const auto r = dance_condense(c, d.train, bank, [&](const IterRecord&) { ++sunk; });
    EXPECT_EQ(r.records.size(), iters);
    EXPECT_EQ(sunk, iters);
    EXPECT_EQ(r.calibrations, iters / interval);
    for (const auto& rec : r.records) {
      EXPECT_EQ(rec.loss_calib.has_value(), rec.iter % interval == 0);
      ASSERT_TRUE(rec.lambda.has_value());
      EXPECT_EQ(*rec.expert, 0u);
    }
  }
  auto off = small_cfg(3);
  off.calib_steps = 0;
  EXPECT_EQ(dance_condense(off, d.train, bank).calibrations, 0u);
}

TEST(Condense, DeterministicForSeed) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train, 2);
  auto c = small_cfg(3);
  c.augment.color = c.augment.crop = true;
  const auto a = dance_condense(c, d.train, bank);
  const auto b = dance_condense(c, d.train, bank);
  EXPECT_TRUE(bit_equal(a.syn.canvases, b.syn.canvases));
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].loss_match, b.records[i].loss_match);
    EXPECT_EQ(a.records[i].lambda, b.records[i].lambda);
  }
  c.seed = 6;
  EXPECT_FALSE(bit_equal(dance_condense(c, d.train, bank).syn.canvases, a.syn.canvases));
  const auto spec = dance::testing::tiny_net(d.train);
  EXPECT_TRUE(bit_equal(dm_condense(c, d.train, spec).syn.canvases,
                        dm_condense(c, d.train, spec).syn.canvases));
}

TEST(Condense, DmStepMatchesClosedForm) {
  // With phi = flatten and the whole class as the real batch, the gradient
  // of ||mu_r - mu_s||^2 wrt each synthetic row is 2/m (mu_s - mu_r).
  const auto d = dance::testing::tiny_patches(2, 12);
  auto c = small_cfg(3);
  c.factor = 1;
  c.ipc = 3;
  c.real_batch = 12;
  CondenseHooks hooks;
  hooks.dm_encoder = [](std::size_t, Tape<float>&) {
    return FeatureFn<float>([](const Var<float>& x) { return flatten(x); });
  };
  const auto start = init_synthetic(d.train, c.ipc, 1, c.seed);
  const auto r = dm_condense(c, d.train, dance::testing::tiny_net(d.train), {}, hooks);

  const std::size_t row = 64, m = c.ipc;
  std::vector<double> p(start.canvases.values().begin(), start.canvases.values().end());
  std::vector<double> v(p.size(), 0.0);
  for (std::size_t it = 0; it < c.iterations; ++it) {
    double loss = 0;
    for (std::size_t k = 0; k < 2; ++k) {
      std::vector<double> mu_r(row, 0.0), mu_s(row, 0.0);
      for (auto i : d.train.class_index[k])
        for (std::size_t j = 0; j < row; ++j) mu_r[j] += d.train.images[i * row + j] / 12.0;
      for (std::size_t s = 0; s < m; ++s)
        for (std::size_t j = 0; j < row; ++j) mu_s[j] += p[(k * m + s) * row + j] / m;
      for (std::size_t j = 0; j < row; ++j) {
        const double diff = mu_s[j] - mu_r[j];
        loss += diff * diff;
        for (std::size_t s = 0; s < m; ++s) {
          const std::size_t at = (k * m + s) * row + j;
          v[at] = c.momentum * v[at] + 2.0 * diff / m;
        }
      }
    }
    EXPECT_NEAR(r.records[it].loss_match, loss, 1e-4 * (1 + loss));
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= effective_lr(c) * v[i];
  }
  for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(r.syn.canvases[i], p[i], 1e-4) << i;
}

TEST(Condense, CalibrationStepLowersTheLoss) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train, 1, 5);
  auto syn = init_synthetic(d.train, 2, 2, 3);
  const double before = calibration_step(bank.entries[0].expert, syn, 1e-3);
  Tape<float> tape;
  const double after = calib_loss(bank.entries[0].expert, tape.constant(syn.canvases), 2,
                                  std::span<const std::uint32_t>(syn.labels))
                           .value()[0];
  EXPECT_LT(after, before);
}

TEST(Condense, ProgressCsvLayout) {
  IterRecord a;
  a.iter = 1;
  a.loss_match = 0.5;
  a.loss_calib = 2.0;
  a.lambda = 0.25;
  a.expert = 0;
  a.ms = 3;
  IterRecord b;
  b.iter = 2;
  b.loss_match = 0.25;
  b.ms = 4;
  const std::vector<IterRecord> recs{a, b};
  EXPECT_EQ(progress_csv(recs),
            "iter,loss_pltda,loss_calib,lambda,expert_n,ms_per_iter\n"
            "1,0.5,2,0.25,1,3\n"
            "2,0.25,,,,4\n");
}

TEST(Condense, CheckpointsAreWritten) {
  const auto d = dance::testing::tiny_patches();
  const auto dir = dance::testing::scratch_dir("ckpt");
  auto c = small_cfg(4);
  c.checkpoint_every = 2;
  c.checkpoint_path = dir / "s.ckpt";
  const auto r = dm_condense(c, d.train, dance::testing::tiny_net(d.train));
  EXPECT_TRUE(bit_equal(load_synthetic(c.checkpoint_path).canvases, r.syn.canvases));
  EXPECT_EQ(count_lines(progress_csv(r.records)), 5u);
}

TEST(Condense, MismatchedBankIsShapeError) {
  const auto d = dance::testing::tiny_patches(3);
  const auto other = dance::testing::tiny_patches(4);
  const auto bank = dance::testing::tiny_bank(other.train);
  EXPECT_THROW(dance_condense(small_cfg(1), d.train, bank), ShapeError);
}

TEST(Condense, SingleExpertAtInitReducesToDm) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train, 1);
  auto c = small_cfg(5);
  c.calib_steps = 0;
  c.augment.color = c.augment.crop = true;
  CondenseHooks dh;
  dh.force_lambda = [](std::size_t) { return 1.0; };
  CondenseHooks mh;
  mh.dm_encoder = [&](std::size_t, Tape<float>& tape) {
    return encoder_fn(tape, bank.entries[0].init);
  };
  const auto a = dance_condense(c, d.train, bank, {}, dh);
  const auto b = dm_condense(c, d.train, bank.spec, {}, mh);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i)
    EXPECT_NEAR(a.records[i].loss_match, b.records[i].loss_match, 1e-6) << i;
  EXPECT_TRUE(bit_equal(a.syn.canvases, b.syn.canvases));
}

TEST(Condense, ZeroLearningRateKeepsInit) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train);
  auto c = small_cfg(3);
  c.lr = 0.0;
  const auto r = dance_condense(c, d.train, bank);
  EXPECT_TRUE(bit_equal(r.syn.canvases, init_synthetic(d.train, c.ipc, c.factor, c.seed).canvases));
}

TEST(CalibLoss, UniformLogitsGiveLogK) {
  const auto d = dance::testing::tiny_patches();
  auto expert = build_convnet(dance::testing::tiny_net(d.train), 2);
  expert.get("head.weight").fill(0.0f);
  expert.get("head.bias").fill(0.0f);
  const auto syn = init_synthetic(d.train, 2, 2, 0);
  Tape<float> tape;
  const double v = calib_loss(expert, tape.constant(syn.canvases), 2,
                              std::span<const std::uint32_t>(syn.labels))
                       .value()[0];
  EXPECT_NEAR(v, std::log(3.0), 1e-6);

  // A head that shouts the right class for every example.
  expert.get("head.bias")[1] = 1e4f;
  const std::vector<std::uint32_t> ones(syn.labels.size(), 1);
  const double w = calib_loss(expert, tape.constant(syn.canvases), 2,
                              std::span<const std::uint32_t>(ones))
                       .value()[0];
  EXPECT_NEAR(w, 0.0, 1e-6);
}

TEST(CalibLoss, MatchesCrossEntropyOracle) {
  const auto d = dance::testing::tiny_patches();
  const auto expert = build_convnet(dance::testing::tiny_net(d.train), 4);
  const auto syn = init_synthetic(d.train, 2, 2, 9);
  const auto [images, labels] = unfactor_all(syn);
  const auto logits = predict_logits(expert, images);
  const std::size_t n = labels.size(), k = 3;
  double oracle = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max<double>(mx, logits[i * k + j]);
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[i * k + j] - mx);
    oracle += mx + std::log(z) - logits[i * k + labels[i]];
  }
  oracle /= static_cast<double>(n);
  Tape<float> tape;
  const double v = calib_loss(expert, tape.constant(syn.canvases), 2,
                              std::span<const std::uint32_t>(syn.labels))
                       .value()[0];
  EXPECT_NEAR(v, oracle, 1e-5 * (1 + oracle));
}

TEST(Condense, DanceAndDmShareInitAndLabels) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train);
  auto c = small_cfg(3);
  c.lr = 0.0;
  const auto a = dance_condense(c, d.train, bank);
  const auto b = dm_condense(c, d.train, bank.spec);
  EXPECT_TRUE(bit_equal(a.syn.canvases, b.syn.canvases));
  c.lr = 0.05;
  const auto moved = dance_condense(c, d.train, bank);
  EXPECT_EQ(moved.syn.labels, init_synthetic(d.train, c.ipc, c.factor, c.seed).labels);
}

TEST(Condense, DanceLowersFreshEncoderDmLoss) {
  GaussianPatchOptions o;
  o.train_per_class = 20;
  o.test_per_class = 1;
  const auto d = make_gaussian_patches(o);
  const auto spec = spec_for(d.train, 2, 8);
  TrainOptions t;
  t.epochs = 5;
  t.batch_size = 64;
  const auto bank = build_bank(d.train, nullptr, spec, 1, 3, t);
  std::vector<double> deltas;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CondenseConfig c;
    c.iterations = 20;
    c.ipc = 2;
    c.real_batch = 20;
    c.seed = seed;
    const auto r = dance_condense(c, d.train, bank);
    const auto start = init_synthetic(d.train, c.ipc, c.factor, seed);
    const auto probe = build_convnet(spec, 100 + seed);
    auto loss_of = [&](const SyntheticSet& s) {
      Tape<float> tape;
      Rng rng(seed);
      return static_cast<double>(
          dm_loss(encoder_fn(tape, probe), d.train, tape.constant(s.canvases), s, 20, rng)
              .value()[0]);
    };
    deltas.push_back(loss_of(r.syn) - loss_of(start));
  }
  std::nth_element(deltas.begin(), deltas.begin() + 2, deltas.end());
  EXPECT_LT(deltas[2], 0.0);
}
