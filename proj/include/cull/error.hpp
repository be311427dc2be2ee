#pragma once

#include <stdexcept>
#include <string>

namespace cull {

/// Base class for every error raised by the library. The CLI maps each
/// subclass to its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A loss was requested over a batch whose targets are all padding.
class DegenerateBatchError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// NaN or Inf produced by an op.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, adapter, pruning or pipeline configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A token sequence does not fit into the model's positional range.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint, corpus or trace file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training diverged.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// The length filter would remove every pair.
class FilterDegenerateError : public Error {
 public:
  using Error::Error;
};

/// Throughput measurement could not produce a rate.
class MeasurementError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage input is missing.
class DependencyError : public Error {
 public:
  DependencyError(const std::string& artifact, const std::string& stage)
      : Error("missing artifact '" + artifact + "' required by stage '" + stage + "'"),
        artifact_(artifact) {}

  const std::string& artifact() const noexcept { return artifact_; }

 private:
  std::string artifact_;
};

}  // namespace cull
