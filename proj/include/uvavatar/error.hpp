#pragma once

#include <stdexcept>
#include <string>

namespace uvavatar {

/// Base class of every error thrown by the library. `exit_code()` maps the
/// failure category onto the CLI's process exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Bad arguments, shape or dimension mismatches, invalid configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// File missing, unreadable, or malformed.
class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Non-finite values, degenerate geometry, singular matrices.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// A Gaussian whose covariance cannot be inverted even after regularization.
class InvalidGaussian : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace uvavatar
