// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dance {

/// Deterministic random stream. All randomness in a run derives from one
/// 64-bit seed through named substreams, so adding a consumer never shifts
/// the draws seen by another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream keyed by (seed, name).
  static Rng substream(std::uint64_t seed, std::string_view name);
  /// Child stream keyed by this stream's next draw and a name.
  Rng fork(std::string_view name);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be > 0.
  std::size_t index(std::size_t n);
  /// Uniform integer in [lo, hi].
  int integer(int lo, int hi);
  /// Standard normal (Box-Muller, both outputs used).
  double normal();

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[index(i)]);
  }

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t hash_name(std::string_view name);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace dance
