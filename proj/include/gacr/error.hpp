#pragma once

#include <stdexcept>
#include <string>

namespace gacr {

// All library failures derive from Error so the CLI can map them to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated precondition on an otherwise valid call (wrong shapes, missing truth, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericFault : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  BackendError(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace gacr
