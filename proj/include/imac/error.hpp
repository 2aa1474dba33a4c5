#pragma once

#include <stdexcept>
#include <string>

namespace imac {

// Error taxonomy shared by the library and the CLI (which maps each kind to
// an exit code).

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shapes that cannot be combined.
struct DimensionError : Error {
  using Error::Error;
};

// Caller violated a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

// Bad user-supplied data (coordinates, labels, ...).
struct ValidationError : Error {
  using Error::Error;
};

// Singular systems, non-finite losses.
struct NumericalError : Error {
  using Error::Error;
};

// Malformed or version-mismatched files.
struct FormatError : Error {
  using Error::Error;
};

// Unknown keys, unparsable values, unknown variants.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace imac
