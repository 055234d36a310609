#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace semtx {

// Base of every error thrown by the library. The CLI maps subclasses onto
// exit codes, so keep the hierarchy flat.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text. Line numbers are 1-based; 0 means "unknown".
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Input parsed but violates a structural invariant (cycle, two roots, ...).
class StructuralError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// The statistic is not defined for the given input (e.g. all ties).
class UndefinedResultError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace semtx
