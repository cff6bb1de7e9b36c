#pragma once

#include <stdexcept>
#include <string>

namespace ntex {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar loss, misaligned state).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Binary stream failed magic/version/length validation.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class MissingUvError : public ParseError {
 public:
  using ParseError::ParseError;
};

class EditError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CheckError : public Error {
 public:
  using Error::Error;
};

}  // namespace ntex
