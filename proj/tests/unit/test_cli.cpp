// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "dance/binary_io.hpp"
#include "dance/error.hpp"
#include "fixtures.hpp"

using namespace dance;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result dance_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dance");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  const auto b = read_file(p);
  return {b.begin(), b.end()};
}

// Small fixture and network so a whole pipeline runs in seconds.
std::vector<std::string> tiny(const fs::path& dir, std::vector<std::string> extra) {
  std::vector<std::string> v = {"--out-dir", dir.string(),
                                "--set", "fixture_classes=3",
                                "--set", "fixture_train_per_class=12",
                                "--set", "fixture_test_per_class=6",
                                "--set", "fixture_resolution=8",
                                "--set", "net_depth=1",
                                "--set", "net_width=4",
                                "--set", "expert_epochs=1",
                                "--set", "expert_batch=16",
                                "--set", "num_experts=1",
                                "--set", "iterations=3",
                                "--set", "ipc=1",
                                "--set", "real_batch=4",
                                "--set", "eval_epochs=2",
                                "--set", "eval_batch=8",
                                "--set", "repeats=2",
                                "--set", "diag_epochs=2",
                                "--set", "checkpoints=2"};
  extra.insert(extra.end(), v.begin(), v.end());
  return extra;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  cli::RunConfig c;
  EXPECT_EQ(c.size("ipc"), 10u);
  EXPECT_EQ(c.str("method"), "dance");
  c.merge_text("# comment\nipc = 50\n\nlr=0.5  # trailing\n", "test.cfg");
  EXPECT_EQ(c.size("ipc"), 50u);
  EXPECT_DOUBLE_EQ(c.real("lr"), 0.5);
  c.set("match_color", "true");
  EXPECT_TRUE(c.flag("match_color"));
  EXPECT_THROW(c.set("no_such_key", "1"), ConfigError);
  c.set("ipc", "-3");
  EXPECT_THROW(c.size("ipc"), ConfigError);
  c.set("ipc", "abc");
  EXPECT_THROW(c.size("ipc"), ConfigError);
}

TEST(Config, MalformedLineNamesFileAndLine) {
  cli::RunConfig c;
  try {
    c.merge_text("ipc = 1\nthis line has no equals\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(c.merge_file("/nonexistent/x.cfg"), IoError);
}

TEST(Config, EchoListsEveryKey) {
  cli::RunConfig c;
  const std::string echo = c.echo();
  for (const auto& k : cli::known_keys())
    EXPECT_NE(echo.find(k.name + " = "), std::string::npos) << k.name;
}

TEST(Cli, ExitCodes) {
  const auto dir = dance::testing::scratch_dir("cli_codes");
  EXPECT_EQ(dance_cli({"bogus"}).code, cli::kConfig);
  EXPECT_EQ(dance_cli({"--help"}).code, cli::kOk);
  EXPECT_EQ(dance_cli(tiny(dir, {"condense"})).code, cli::kConfig);  // no bank
  EXPECT_EQ(dance_cli(tiny(dir, {"pretrain", "--num-experts", "0"})).code, cli::kConfig);
  EXPECT_EQ(dance_cli(tiny(dir, {"evaluate", "--synthetic", (dir / "none").string()})).code,
            cli::kIo);
  EXPECT_EQ(dance_cli(tiny(dir, {"pretrain", "--set", "unknown=1"})).code, cli::kConfig);
  const auto r = dance_cli(tiny(dir, {"condense", "--method", "dm", "--set", "lr=1e300"}));
  EXPECT_EQ(r.code, cli::kNumeric) << r.err;
}

TEST(Cli, FlagsOverrideSetOverrideFile) {
  const auto dir = dance::testing::scratch_dir("cli_precedence");
  std::ofstream(dir / "run.cfg") << "ipc = 3\nfactor = 4\nseed = 9\n";
  const auto r = dance_cli(tiny(dir, {"baseline", "--method", "random", "--config",
                                      (dir / "run.cfg").string(), "--set", "ipc=2", "--ipc", "1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string echo = slurp(dir / "baseline_random.resolved.cfg");
  EXPECT_NE(echo.find("ipc = 1\n"), std::string::npos);
  EXPECT_NE(echo.find("factor = 4\n"), std::string::npos);
  EXPECT_NE(echo.find("seed = 9\n"), std::string::npos);
  EXPECT_NE(echo.find("out = " + (dir / "syn_random.dcsyn").string()), std::string::npos);
}

TEST(Cli, PipelineRerunsAreByteIdentical) {
  std::string first[4];
  for (int run = 0; run < 2; ++run) {
    const auto dir = dance::testing::scratch_dir("cli_pipeline");
    ASSERT_EQ(dance_cli(tiny(dir, {"pretrain"})).code, 0);
    const std::string bank = (dir / "bank.dcxb").string();
    auto c = dance_cli(tiny(dir, {"condense", "--bank", bank, "--set", "factor=2"}));
    ASSERT_EQ(c.code, 0) << c.err;
    const std::string syn = (dir / "syn_dance.dcsyn").string();
    ASSERT_EQ(dance_cli(tiny(dir, {"evaluate", "--synthetic", syn})).code, 0);
    ASSERT_EQ(dance_cli(tiny(dir, {"diagnose", "--mode", "lambda-sweep", "--bank", bank})).code, 0);
    const std::string files[4] = {slurp(dir / "bank.dcxb"), slurp(syn),
                                  slurp(dir / "eval_report.csv"), slurp(dir / "lambda_sweep.csv")};
    for (int i = 0; i < 4; ++i) {
      if (run == 0) first[i] = files[i];
      else EXPECT_TRUE(first[i] == files[i]) << "file " << i << " differs";
    }
    EXPECT_TRUE(fs::exists(dir / "syn_dance.progress.csv"));
    EXPECT_TRUE(fs::exists(dir / "condense_dance.resolved.cfg"));
  }
}
