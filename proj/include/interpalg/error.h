#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace interpalg {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor, model or map shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An index (feature, class, stage, layer) is outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// A configuration value violates its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A named model, input, window or stored object does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// A file or stored document is missing, unreadable or malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

// Numerical routine failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace interpalg
