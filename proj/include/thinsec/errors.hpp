#pragma once

#include <stdexcept>
#include <string>

namespace thinsec {

// Error taxonomy. The CLI maps each family to its own exit code, so new
// errors should derive from the family they belong to rather than Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// configuration / model-spec family
class ConfigError : public Error {
 public:
  using Error::Error;
};
class SpecError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// tensor-level programming errors
class DimensionError : public Error {
 public:
  using Error::Error;
};
class IndexError : public Error {
 public:
  using Error::Error;
};
class TapeError : public Error {
 public:
  using Error::Error;
};
class RetentionError : public TapeError {
 public:
  using TapeError::TapeError;
};
class UninitializedStatsError : public Error {
 public:
  using Error::Error;
};
class ProbeError : public Error {
 public:
  using Error::Error;
};

// data family
class DataError : public Error {
 public:
  using Error::Error;
};
class FormatError : public DataError {
 public:
  using DataError::DataError;
};
class ImportError : public DataError {
 public:
  using DataError::DataError;
};
class CorpusError : public DataError {
 public:
  using DataError::DataError;
};
class GenerationError : public DataError {
 public:
  using DataError::DataError;
};
class SplitError : public DataError {
 public:
  using DataError::DataError;
};

// NaN/Inf encountered while optimizing
class NumericError : public Error {
 public:
  using Error::Error;
};

class UnsupportedArchitectureError : public Error {
 public:
  using Error::Error;
};

}  // namespace thinsec
