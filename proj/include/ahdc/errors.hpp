#pragma once

#include <stdexcept>
#include <string>

namespace ahdc {

/// Base of all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input, configuration or missing upstream artifact (CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// I/O failure; the message carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A loss or activation became NaN/Inf during training.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace ahdc
