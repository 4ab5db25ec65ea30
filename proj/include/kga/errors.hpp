#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kga {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/matrix dimension mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or incompatible model/data dimensions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation precondition violated (empty batch, non-scalar backward, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Math domain violations (log of a non-positive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed serialized data; carries the byte offset of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Serialized data from an unsupported format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

// Metric undefined for the given input (single-class labels, zero variance).
class MetricError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss term.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace kga
