#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace saqe {

// Base of every error the library raises. The CLI maps each family onto an
// exit code: config 2, numeric 3, data validation 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

// alpha outside (0, 1) and similar argument-domain violations.
class DomainError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::vector<std::string> trace = {})
      : Error(what), trace_(std::move(trace)) {}
  int exit_code() const noexcept override { return 3; }
  const std::vector<std::string>& trace() const noexcept { return trace_; }

 private:
  std::vector<std::string> trace_;
};

class ConvergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateDistributionError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class SingularDesignError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace saqe
