#pragma once

#include <stdexcept>
#include <string>

namespace pvgf {

// Base class for every error this library raises. The CLI catches this one
// type and maps it to a nonzero exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/feature dimensions. The message names the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise invalid numeric input (NaN into softmax, etc.).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset files (manifest lines, missing images, id mismatches).
class DataError : public Error {
 public:
  using Error::Error;
};

// A loss batch with nothing to average over.
class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss; the message names the component.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A token sequence longer than the model accepts.
class LengthError : public Error {
 public:
  using Error::Error;
};

}  // namespace pvgf
