#pragma once

#include <stdexcept>
#include <string>

namespace wmqre {

// Base class for every failure raised by the library. Argument validation
// uses std::invalid_argument directly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// X (or a weighted Newton matrix) does not have full column rank.
class SingularDesignError : public Error {
 public:
  using Error::Error;
};

// The Newton matrix of the fixed-effect update cannot be inverted.
class StepSingularError : public Error {
 public:
  using Error::Error;
};

// The 2x2 fixed-point system for the variance components is singular.
class DegenerateDesignError : public Error {
 public:
  using Error::Error;
};

// A cluster covariance block lost positive definiteness.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// The score Jacobian is singular, so no sandwich covariance exists.
class InferenceUnavailableError : public Error {
 public:
  using Error::Error;
};

// Malformed user input (CSV, schema, configuration).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace wmqre
