// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace dance::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kIo = 3,
  kNumeric = 4,
};

/// Entry point of the `dance` executable. Never throws; errors map to exit
/// codes and a one-line message on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dance::cli
