// SPDX-License-Identifier: Apache-2.0
#pragma once
// Flat `key = value` run configuration. Every key has a registered default;
// unknown keys are rejected. Layers apply in order defaults < file < flags.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dance::cli {

struct KeyInfo {
  std::string name;
  std::string fallback;
  std::string help;
};

/// All recognised keys in echo order.
const std::vector<KeyInfo>& known_keys();

class RunConfig {
 public:
  /// Registered defaults; `out_dir` comes from DANCE_OUT_DIR when set.
  RunConfig();

  /// Parses a config document. `origin` names the source in messages.
  void merge_text(std::string_view text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  /// Throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Every key with its resolved value, one `key = value` per line.
  std::string echo() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dance::cli
