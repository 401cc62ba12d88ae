#pragma once

#include <stdexcept>
#include <string>

namespace ncx {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

/// NaN/Inf or domain violation in numeric computation.
struct NumericError : Error {
  using Error::Error;
};

/// API contract violated by the caller (wrong argument kind, empty input, ...).
struct ContractError : Error {
  using Error::Error;
};

/// Store is full and the configured policy rejects new items.
struct CapacityError : Error {
  using Error::Error;
};

/// Malformed or truncated file; message carries the byte offset.
struct FormatError : Error {
  using Error::Error;
};

/// Requested target cannot be met with the given inputs.
struct InfeasibleError : Error {
  using Error::Error;
};

}  // namespace ncx
