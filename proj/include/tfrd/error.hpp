#pragma once

#include <stdexcept>
#include <string>

namespace tfrd {

// Base class for every error raised by the library. Each subclass maps to one
// CLI exit code (see tools/tfrd.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint written for a different model configuration.
class VersionError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace tfrd
