#pragma once

#include <stdexcept>
#include <string>

namespace hsi {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data: bad headers, truncated payloads,
/// shape mismatches, degenerate rasters.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure could not produce a valid result (singular
/// covariance, NaN loss, rank-0 input).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameters or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace hsi
