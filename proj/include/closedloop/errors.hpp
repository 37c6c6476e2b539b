#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace closedloop {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InvalidParameter {
  std::string field;
  std::string reason;
};

/// Raised when a configuration fails validation; carries every violation at once.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<InvalidParameter> issues)
      : Error(format(issues)), issues_(std::move(issues)) {}
  ValidationError(std::string field, std::string reason)
      : ValidationError(std::vector<InvalidParameter>{{std::move(field), std::move(reason)}}) {}

  const std::vector<InvalidParameter>& issues() const noexcept { return issues_; }

 private:
  static std::string format(const std::vector<InvalidParameter>& issues) {
    std::string msg = "invalid configuration:";
    for (const auto& i : issues) msg += "\n  " + i.field + ": " + i.reason;
    return msg;
  }

  std::vector<InvalidParameter> issues_;
};

/// Numerical failures (matrix exponential, realness, horizon limits).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class PropagatorFailure : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class RealnessViolation : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class HorizonTooLong : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A requested output grid is incompatible with a simulation step or symbol duration.
class GridMismatch : public Error {
 public:
  using Error::Error;
};

/// Symbol duration or release offset is not a whole number of grid steps.
using GridAlignment = GridMismatch;

class UpstreamUnsupported : public Error {
 public:
  using Error::Error;
};

class NoEquilibrium : public Error {
 public:
  using Error::Error;
};

}  // namespace closedloop
