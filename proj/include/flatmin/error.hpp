#pragma once

#include <stdexcept>
#include <string>

namespace flatmin {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, non-finite or shape-inconsistent input.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A degenerate direction was requested but the network has none.
class NoDegenerateDirection : public Error {
 public:
  using Error::Error;
};

/// Binary data that no homogeneous linear classifier separates.
class NotSeparable : public Error {
 public:
  using Error::Error;
};

/// Not enough repetitions or cycles to fit a trend.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

}  // namespace flatmin
