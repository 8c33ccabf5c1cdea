// SPDX-License-Identifier: Apache-2.0
#pragma once
// Random-instance gradient checks in double precision, shared by the unit
// tests and the acceptance runner.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dance/rng.hpp"

namespace dance::testing {

struct GradCase {
  std::string name;
  bool composed = false;  // composed losses use the looser tolerance
  /// Builds one random instance from `rng` and returns the worst relative
  /// error between reverse-mode and central-difference gradients.
  std::function<double(Rng&)> run;
};

const std::vector<GradCase>& grad_cases();

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kComposedTolerance = 1e-4;

struct GradSummary {
  std::string name;
  std::size_t instances = 0;
  double worst = 0.0;
  bool pass = false;
};

/// Runs `instances` random instances of every case with seeds derived from
/// `seed` and the case name.
std::vector<GradSummary> run_grad_suite(std::size_t instances, std::uint64_t seed);

}  // namespace dance::testing
