#pragma once

#include <stdexcept>
#include <string>

namespace qpdyn {

// Base of all library errors. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model, kernel, volume or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Eigensolver failure, broken numerical invariant, quadrature failure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Operation requested on a model it does not apply to
// (e.g. transfer matrices for a long-range kernel).
class UnsupportedModel : public Error {
 public:
  using Error::Error;
};

// Real energy coincides with an eigenvalue of the finite-volume operator.
class SingularEnergy : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace qpdyn
