#pragma once

#include <stdexcept>
#include <string>

namespace essm {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration (bad flags, bad config file, bad
/// hyperparameters). CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, manifests, labels).
/// CLI exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during computation (non-finite loss, undefined metric).
/// CLI exit code 4.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape mismatch in a primitive or layer.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace essm
