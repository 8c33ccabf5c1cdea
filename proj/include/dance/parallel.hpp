// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace dance {

/// Runs fn(0..n-1) on up to `threads` workers. Jobs must be independent;
/// each writes only its own slot, so results do not depend on scheduling.
/// The first exception (lowest job index) is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace dance
