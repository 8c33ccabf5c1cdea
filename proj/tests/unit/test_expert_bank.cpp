// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "dance/binary_io.hpp"
#include "dance/error.hpp"
#include "dance/expert_bank.hpp"
#include "fixtures.hpp"

using namespace dance;

namespace {

void expect_same_params(const ParamSet<float>& a, const ParamSet<float>& b) {
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.spec(), b.spec());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_TRUE(bit_equal(a[i].value, b[i].value)) << a[i].name;
  }
}

}  // namespace

TEST(ExpertBank, SaveLoadRoundTrip) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train, 2);
  const auto dir = dance::testing::scratch_dir("bank");
  save_bank(dir / "b.dcxb", bank);
  const auto back = load_bank(dir / "b.dcxb");
  EXPECT_EQ(back.spec, bank.spec);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    expect_same_params(back.entries[i].init, bank.entries[i].init);
    expect_same_params(back.entries[i].expert, bank.entries[i].expert);
    EXPECT_EQ(back.entries[i].meta, bank.entries[i].meta);
  }
}

TEST(ExpertBank, CorruptFilesAreRejected) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train);
  const auto dir = dance::testing::scratch_dir("bank_bad");
  save_bank(dir / "b.dcxb", bank);
  const auto bytes = read_file(dir / "b.dcxb");
  for (std::size_t cut : {std::size_t{3}, bytes.size() / 3, bytes.size() - 1}) {
    write_file_atomic(dir / "cut", std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut));
    EXPECT_THROW(load_bank(dir / "cut"), IoError) << "cut at " << cut;
  }
  auto extra = bytes;
  extra.push_back(1);
  write_file_atomic(dir / "extra", extra);
  EXPECT_THROW(load_bank(dir / "extra"), IoError);
  EXPECT_THROW(load_bank(dir / "missing"), IoError);
}

TEST(ExpertBank, TrainingIsDeterministicAndThreadIndependent) {
  const auto d = dance::testing::tiny_patches();
  TrainOptions t;
  t.epochs = 1;
  t.batch_size = 16;
  const auto spec = dance::testing::tiny_net(d.train);
  const auto a = build_bank(d.train, &d.test, spec, 2, 11, t, 1);
  const auto b = build_bank(d.train, &d.test, spec, 2, 11, t, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    expect_same_params(a.entries[i].expert, b.entries[i].expert);
    EXPECT_GE(a.entries[i].meta.test_accuracy, 0.0);
  }
  EXPECT_FALSE(bit_equal(a.entries[0].init[0].value, a.entries[1].init[0].value));
  EXPECT_THROW(build_bank(d.train, nullptr, spec, 0, 11, t), ConfigError);
}

TEST(ExpertBank, MismatchedDatasetIsShapeError) {
  const auto d = dance::testing::tiny_patches(3);
  const auto other = dance::testing::tiny_patches(4);
  const auto bank = dance::testing::tiny_bank(d.train);
  EXPECT_NO_THROW(check_bank_matches(bank, d.train));
  EXPECT_THROW(check_bank_matches(bank, other.train), ShapeError);
}

TEST(ExpertBank, MiddleEncoderEndpoints) {
  const auto d = dance::testing::tiny_patches();
  const auto bank = dance::testing::tiny_bank(d.train, 2);
  expect_same_params(middle_encoder(bank, 1, 1.0), bank.entries[1].init);
  expect_same_params(middle_encoder(bank, 1, 0.0), bank.entries[1].expert);
  EXPECT_THROW(middle_encoder(bank, 2, 0.5), ShapeError);

  Rng rng(3);
  bool saw[2] = {false, false};
  for (int i = 0; i < 50; ++i) {
    const auto m = sample_middle_encoder(bank, rng);
    ASSERT_LT(m.expert, 2u);
    saw[m.expert] = true;
    EXPECT_GE(m.lambda, 0.0);
    EXPECT_LT(m.lambda, 1.0);
  }
  EXPECT_TRUE(saw[0] && saw[1]);
}
