#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace comma {

// Base for every error raised by the library. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition (non-scalar loss, all-masked row, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset content. line is 1-based; 0 when no line applies.
class DataError : public Error {
 public:
  DataError(const std::string& message, std::size_t line = 0, std::string field = {})
      : Error(line == 0 ? message
                        : "line " + std::to_string(line) + (field.empty() ? "" : ", field '" + field + "'") +
                              ": " + message),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, long step) : Error(message), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

enum class FormatErrorKind { kIo, kMagic, kVersion, kTruncated, kHeader, kParameterMismatch };

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& message) : Error(message), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace comma
