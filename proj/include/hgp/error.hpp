#pragma once

#include <stdexcept>
#include <string>

namespace hgp {

// Base for every error raised by the library. The CLI maps UserError
// subclasses to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Problems with inputs supplied by the caller (files, configs, arguments).
class UserError : public Error {
 public:
  using Error::Error;
};

class ParseError : public UserError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what);
  ParseError(const std::string& what) : UserError(what) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

class IoError : public UserError {
 public:
  using UserError::UserError;
};

class EmptyGraphError : public UserError {
 public:
  using UserError::UserError;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class LoadError : public UserError {
 public:
  using UserError::UserError;
};

class StratificationError : public UserError {
 public:
  using UserError::UserError;
};

class LabelError : public UserError {
 public:
  using UserError::UserError;
};

class DomainError : public UserError {
 public:
  using UserError::UserError;
};

class AlignmentError : public UserError {
 public:
  using UserError::UserError;
};

class SpecError : public UserError {
 public:
  using UserError::UserError;
};

class EmptyDatasetError : public UserError {
 public:
  using UserError::UserError;
};

class LevelExhaustedError : public UserError {
 public:
  LevelExhaustedError(int level_reached, int requested);
  int level_reached() const { return level_reached_; }

 private:
  int level_reached_;
};

// Violated preconditions of library calls.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

class TapeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// NaN or Inf produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace hgp
