#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eifnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an operation produces NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class AutodiffError : public Error {
 public:
  using Error::Error;
};

/// Event-stream parse or validation failure. Carries the 1-based source line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace eifnet
