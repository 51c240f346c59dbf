#pragma once

#include <stdexcept>
#include <string>

namespace evogeo {

// Base class for every error raised by the library. The CLI maps these to a
// nonzero exit status with the message printed to stderr.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented precondition (invalid histogram, r outside
// K(H), boundary point passed where an interior one is required, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// An iterative procedure failed to converge or left its admissible region.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Parse/IO failures in configuration and trajectory files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace evogeo
