// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace aftk {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or geometries.
struct DimensionError : Error {
  using Error::Error;
};

/// Out-of-range parameter (temperature, k, bandwidth, ...).
struct ParameterError : Error {
  using Error::Error;
};

/// NaN/Inf produced during a computation.
struct NumericError : Error {
  using Error::Error;
};

struct LocalizationError : Error {
  using Error::Error;
};

/// An object used in a state that does not permit the call (e.g. unfrozen model).
struct StateError : Error {
  using Error::Error;
};

struct SamplingError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace aftk
