#pragma once

#include <stdexcept>
#include <string>

namespace sst {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericDomainError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation precondition (non-scalar loss, missing grad...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class UnsupportedPrimitiveError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
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

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

/// Raised by the tracking allocator when a configured memory cap is exceeded.
class MemoryCapExceeded : public Error {
 public:
  using Error::Error;
};

}  // namespace sst
