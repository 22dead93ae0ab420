#pragma once

#include <stdexcept>
#include <string>

namespace bacnn {

// Error categories. The CLI maps each one onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, diverged optimizer state.
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitInput = 2,
  kExitConfig = 3,
  kExitNumerical = 4,
};

}  // namespace bacnn
