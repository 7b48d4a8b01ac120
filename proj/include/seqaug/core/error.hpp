#pragma once

#include <stdexcept>
#include <string>

namespace seqaug {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller supplied an argument outside the documented domain.
class InputError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or an otherwise undefined numeric result.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-range data on disk.
class DataError : public Error {
 public:
  using Error::Error;
};

// Component used before it was fitted.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqaug
