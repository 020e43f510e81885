#pragma once

#include <stdexcept>
#include <string>

namespace rcqa {

// Base for every error raised by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, flags or hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or invariant-violating data (datasets, dumps, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

// Shape or domain violation inside the numeric kernels.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace rcqa
