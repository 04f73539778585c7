#pragma once

#include <stdexcept>
#include <string>

namespace ctgbp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A spline query time lies outside the half-open valid domain.
class OutOfDomain : public Error {
 public:
  using Error::Error;
};

/// A landmark lies behind (or on) the image plane.
class CheiralityViolation : public Error {
 public:
  using Error::Error;
};

/// Structural misuse of a factor graph (dangling ids, duplicates, bad precision).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration or malformed input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A solver could not make progress (e.g. singular normal equations).
class SolverFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace ctgbp
