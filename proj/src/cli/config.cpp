// SPDX-License-Identifier: Apache-2.0
#include "cli/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dance/error.hpp"

namespace dance::cli {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = {
      {"seed", "0", "global seed"},
      {"threads", "1", "worker threads for repeats and pre-training"},
      {"out_dir", "out", "output directory"},
      // data
      {"dataset", "fixture", "fixture | idx | container"},
      {"train_images", "", "IDX images or container path"},
      {"train_labels", "", "IDX labels"},
      {"test_images", "", "IDX images or container path"},
      {"test_labels", "", "IDX labels"},
      {"fixture_classes", "10", ""},
      {"fixture_train_per_class", "500", ""},
      {"fixture_test_per_class", "500", ""},
      {"fixture_channels", "1", ""},
      {"fixture_resolution", "16", ""},
      {"fixture_noise", "0.25", ""},
      {"fixture_seed", "0", ""},
      // network
      {"net_depth", "3", ""},
      {"net_width", "128", ""},
      // experts
      {"bank", "", "expert bank file"},
      {"num_experts", "5", ""},
      {"expert_epochs", "60", ""},
      {"expert_batch", "256", ""},
      {"expert_lr", "0.01", ""},
      {"expert_momentum", "0.9", ""},
      {"expert_weight_decay", "0.0005", ""},
      // condensation
      {"method", "dance", "dance | dm (condense); random | herding | kcenter (baseline)"},
      {"iterations", "20000", ""},
      {"lr", "0.01", "pixel learning rate before IPC scaling"},
      {"momentum", "0.9", ""},
      {"calib_interval", "1", ""},
      {"calib_steps", "1", "0 disables calibration"},
      {"ipc", "10", ""},
      {"factor", "2", ""},
      {"real_batch", "128", ""},
      {"match_color", "false", ""},
      {"match_crop", "false", ""},
      {"checkpoint_every", "0", ""},
      {"baseline_features", "pixels", "pixels | expert"},
      // evaluation
      {"synthetic", "", "synthetic set file"},
      {"repeats", "10", ""},
      {"eval_epochs", "300", ""},
      {"eval_batch", "256", ""},
      {"eval_lr", "0.01", ""},
      {"eval_momentum", "0.9", ""},
      {"eval_weight_decay", "0.0005", ""},
      {"aug_color", "true", ""},
      {"aug_crop", "true", ""},
      {"aug_cutmix", "true", ""},
      // diagnostics
      {"mode", "discrepancy", "discrepancy | lambda-sweep | expert-acc"},
      {"checkpoints", "10", ""},
      {"diag_epochs", "20", "training epochs of the discrepancy run"},
      {"lambda_step", "0.1", ""},
      {"expert_index", "0", "bank entry used by lambda-sweep"},
      {"out", "", "primary output file (command specific default)"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const KeyInfo& k : known_keys()) values_[k.name] = k.fallback;
  if (const char* env = std::getenv("DANCE_OUT_DIR"); env && *env) values_["out_dir"] = env;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::merge_text(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    try {
      set(key, trim(std::string_view(body).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  merge_text(ss.str(), path.string());
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& s = str(key);
  if (s.empty() || s[0] == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (errno || *end) throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

std::size_t RunConfig::size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

double RunConfig::real(const std::string& key) const {
  const std::string& s = str(key);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || errno || *end) throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::string RunConfig::echo() const {
  std::string out;
  for (const KeyInfo& k : known_keys()) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

}  // namespace dance::cli
