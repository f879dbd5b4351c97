// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mgf {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not line up (channel counts, kernel sizes, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared, or a decomposition failed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure or a malformed file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mgf
