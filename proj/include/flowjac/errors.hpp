#pragma once

#include <stdexcept>
#include <string>

namespace flowjac {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix that must be symmetric positive definite is not (asymmetric, or a
/// pivot / eigenvalue fell below the eigen floor).
class NotSpd : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

/// The bracketed covariance of a conditional-mean formula is not invertible.
class SingularSystem : public Error {
 public:
  using Error::Error;
};

/// A state, drift or loss became NaN or infinite.
class NonFiniteState : public Error {
 public:
  using Error::Error;
};

class InsufficientSamples : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration (bad JSON, unknown field, out-of-range value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowjac
