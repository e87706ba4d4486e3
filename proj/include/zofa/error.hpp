#pragma once

#include <stdexcept>
#include <string>

namespace zofa {

// Root of the library's exception hierarchy. The CLI maps each subclass to a
// distinct process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-contract input (shape mismatch, bad index, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Requested operation is not supported for the given layer or loss kind.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration (unknown key, lambda > 0 without source stats).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or divergence during a numerical procedure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace zofa
