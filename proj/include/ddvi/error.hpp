#pragma once

#include <stdexcept>
#include <string>

namespace ddvi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (vector length vs. state count, etc.).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented precondition (non-stochastic row, γ ≥ 1, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An algorithm could not produce a trustworthy result: singular systems,
/// non-convergence, rank collapse, near-defective eigenvectors.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Requested deflation rank cuts a complex-conjugate eigenvalue pair in half.
class ConjugateSplitError : public NumericalError {
 public:
  ConjugateSplitError(const std::string& what, int suggested_rank)
      : NumericalError(what), suggested_rank_(suggested_rank) {}

  int suggested_rank() const noexcept { return suggested_rank_; }

 private:
  int suggested_rank_;
};

/// Experiment configuration is malformed. `path` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace ddvi
