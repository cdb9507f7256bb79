#pragma once

#include <stdexcept>
#include <string>

namespace fsnt {

// Base for every error raised by the library. The CLI maps the subclasses
// onto exit codes: ConfigError/DataError -> 2, everything else -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent configuration / dataset specification.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data that violates a precondition (missing columns, bad cells...).
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A primitive produced NaN/Inf, or the loss diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Truncated/corrupted serialized payloads (checkpoints, state documents).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace fsnt
