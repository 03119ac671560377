#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace wkam {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two objects that must live on the same grid do not.
class GridMismatch : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  PreconditionError(const std::string& what, double residual = 0.0)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// The requested Hamiltonian kind does not support the operation.
class UnsupportedKind : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure ran out of its budget. Carries the residual history.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// A configuration field failed validation; `field()` names it ("grid.N").
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A file the command expected to find does not exist.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace wkam
