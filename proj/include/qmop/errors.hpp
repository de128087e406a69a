// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_ERRORS_HPP
#define QMOP_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace qmop {

// Base class for every error raised by the library. The CLI maps the
// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree (matmul, attention, concat, fusion, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Scalar argument outside its admissible range (temperature, k, theta, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A computation produced or consumed a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Feature file has the wrong magic or an inconsistent layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Feature file is shorter than its header promises.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Decoded contents violate a semantic invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Configuration file is malformed or internally inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace qmop

#endif  // QMOP_ERRORS_HPP
