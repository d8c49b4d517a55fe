#pragma once

#include <stdexcept>
#include <string>

namespace psmlc {

// Every failure raised by the library derives from Error so callers can
// catch the whole family at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent dimensions or contradictory experiment settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A value outside the domain an operation accepts.
class InputError : public Error {
 public:
  using Error::Error;
};

// An operation called out of order (e.g. an update with no forward pass).
class StateError : public Error {
 public:
  using Error::Error;
};

// A partially labeled dataset that breaks the pos/neg presence premise.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

}  // namespace psmlc
