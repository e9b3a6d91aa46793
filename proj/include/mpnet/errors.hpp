#pragma once

#include <stdexcept>
#include <string>

namespace mpnet {

/// Base class for all errors thrown by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape or dimension mismatch. Messages name both shapes.
struct ShapeError : Error {
  using Error::Error;
};

/// Bad experiment/model configuration (unknown keys, invalid values,
/// checkpoint/spec mismatch). CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

/// Dataset file problems (missing directory, wrong record size, bad label
/// bytes). CLI exit code 3.
struct DataError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required (NaN loss, diverged
/// synthesis). CLI exit code 4.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace mpnet
