#pragma once

#include <stdexcept>
#include <string>

namespace cmr {

// Base class for all library errors. The CLI maps subclasses to exit codes:
// ConfigError -> 2, DataError -> 3, NumericalError -> 4, anything else -> 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing data on disk (datasets, model archives, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// 6D rotation input with a zero or parallel vector pair.
class DegenerateRotationError : public Error {
 public:
  using Error::Error;
};

// Procrustes alignment on a rank-deficient point configuration.
class AlignmentDegenerateError : public Error {
 public:
  using Error::Error;
};

// Mesh fails the watertightness requirement of the SDF builder.
class TopologyError : public Error {
 public:
  using Error::Error;
};

// Scene generation could not satisfy its overlap target.
class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmr
