#ifndef AFLOW_ERRORS_HPP_
#define AFLOW_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace aflow {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible shapes, invalid layer geometry, checkpoint/config mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller misuse: bad flag values, empty inputs, vocabulary violations.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data (non-binary labels, bad manifest).
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// A finite-input operation produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace aflow

#endif  // AFLOW_ERRORS_HPP_
