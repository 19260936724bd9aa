// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evtrack {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input file. `line()` is 0 for binary inputs.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Binary container with the right family magic but a different version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value does not hold.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf reached a kernel.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Operation called in a state that does not allow it.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace evtrack
