// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ldar {

// Every failure the library reports derives from Error; the CLI maps the
// concrete kind onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class OracleError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public OracleError {
 public:
  using OracleError::OracleError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DomainError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DimensionError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace ldar
