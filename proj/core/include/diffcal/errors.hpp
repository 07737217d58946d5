#pragma once

#include <stdexcept>
#include <string>

namespace diffcal {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Contradictory or duplicate input records.
class ConflictError : public Error {
 public:
  using Error::Error;
};

// Incomplete response matrix under strict mode, missing join keys, etc.
class MissingDataError : public Error {
 public:
  using Error::Error;
};

// Shape or dimensionality mismatch between related objects.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or malformed config/schema.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A required upstream artifact is absent.
class DependencyError : public Error {
 public:
  using Error::Error;
};

// Transport or remote-service failure after retries.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Statistic undefined for the given input (single-class AUC, constant
// correlation vector, zero baseline accuracy).
class UndefinedStatisticError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss/gradient or diverged optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffcal
