#pragma once

#include <stdexcept>
#include <string>

namespace peft {

// Every error raised by the library derives from Error so the C boundary can
// translate it into a status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, bad arguments, incompatible shapes requested by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data, files, checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf detected during training or evaluation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Tensor shape contract violated.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

}  // namespace peft
