#pragma once

#include <stdexcept>
#include <string>

namespace tpdr {

// Error classes map onto distinct CLI exit codes (see tools/tpdr.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, broken invariants in user data, stale artifacts.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable/unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A file was readable but its contents are malformed or truncated.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Index built from a different checkpoint than the one used at query time.
class StaleIndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Training produced a non-finite loss, embedding or parameter.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace tpdr
