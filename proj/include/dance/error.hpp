// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dance {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes, descriptors or out-of-range arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Missing, truncated or malformed files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape (stale tape, non-scalar loss, mixed tapes).
class TapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace dance
