#pragma once

#include <stdexcept>

namespace angle {

// Error families map onto CLI exit codes: config/format 2, data/IO 3, numeric 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointFormatError : ConfigError {
  using ConfigError::ConfigError;
};

struct CheckpointVersionError : ConfigError {
  using ConfigError::ConfigError;
};

struct CheckpointTruncatedError : ConfigError {
  using ConfigError::ConfigError;
};

}  // namespace angle
