#pragma once

#include <stdexcept>
#include <string>

namespace coadain {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or spatial sizes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Inputs that are well-shaped but violate a contract (non one-hot mask,
/// bad component index, stale saved state, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible archives and documents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures; the message always carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace coadain
