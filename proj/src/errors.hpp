#pragma once

#include <stdexcept>
#include <string>

namespace catface {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad config file, unknown key, invalid value.
struct ConfigError : Error {
  using Error::Error;
};

// Dataset construction problems (empty dataset, too few identities, ...).
struct DataError : Error {
  using Error::Error;
};

// Non-finite values, degenerate inputs, failed numeric contracts.
struct NumericError : Error {
  using Error::Error;
};

// Shape mismatches; messages name both shapes.
struct DimensionError : NumericError {
  using NumericError::NumericError;
};

// File I/O, and checkpoint container failures (bad magic, version, CRC,
// truncation), each raised with a distinct message.
struct IoError : Error {
  using Error::Error;
};

}  // namespace catface
