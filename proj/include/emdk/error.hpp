#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace emdk {

// Base for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Bad configuration: out-of-range knobs, enumeration cap exceeded, missing
// extractor, unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// Inputs that are individually valid but inconsistent with each other
// (trajectory vs policy, mismatched vocabularies, malformed rollout groups).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Errors tied to a position in a line-delimited input.
class LineError : public Error {
 public:
  LineError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ParseError : public LineError {
 public:
  using LineError::LineError;
};

class SequenceError : public LineError {
 public:
  using LineError::LineError;
};

class DataError : public LineError {
 public:
  using LineError::LineError;
};

}  // namespace emdk
