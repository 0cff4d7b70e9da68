#pragma once

#include <stdexcept>
#include <string>

namespace clearmap {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument to a kernel or API call (shape mismatch, stride 0, class out of
// range, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Network description failed to parse or validate.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  // 1-based; 0 when the problem is not tied to a single line.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Malformed or inconsistent input files.
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedError : public DataError {
 public:
  using DataError::DataError;
};

class CountMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class HashMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class WeightShapeError : public DataError {
 public:
  using DataError::DataError;
};

// A NaN or Inf showed up where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace clearmap
