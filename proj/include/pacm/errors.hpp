#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pacm {

// Base for every error raised by the library. The CLI maps NumericError to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::ptrdiff_t layer = -1)
      : Error(what), layer_(layer) {}

  // Offending layer index, or -1 when the error is not tied to a layer.
  std::ptrdiff_t layer() const noexcept { return layer_; }

 private:
  std::ptrdiff_t layer_;
};

}  // namespace pacm
