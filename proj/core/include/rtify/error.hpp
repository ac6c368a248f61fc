#pragma once

#include <stdexcept>
#include <string>

namespace rtify {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failure; the message always carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rtify
