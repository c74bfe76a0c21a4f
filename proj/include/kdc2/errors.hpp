#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kdc2 {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for an op.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A forward op or update produced NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation precondition (non-scalar loss, tau <= 0, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// The finite-difference oracle itself could not be trusted.
class OracleError : public Error {
 public:
  using Error::Error;
};

class MontageError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// User-supplied configuration or data failed validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. Carries the byte (or line) offset where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace kdc2
