#pragma once

#include <stdexcept>
#include <string>

namespace dfe {

// Root of every error thrown by the library. Each subclass maps to one failure
// category so callers (and the CLI exit path) can tell them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or input extents that do not agree. The message names the axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyper-parameters, layer plans or weights.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An operation called in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Caller passed an input that the operation is not defined for (empty lists etc).
class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Inconsistent data sets, e.g. misaligned video ids between two score streams.
class DataError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

// Metric requested on data for which it has no value (AUC with a single class).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dfe
