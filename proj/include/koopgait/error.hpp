#pragma once

#include <stdexcept>
#include <string>

namespace koopgait {

// Failures are grouped by who has to act on them; the CLI maps each group to
// its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, inconsistent or insufficient input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// The optimizer could not produce an estimate.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace koopgait
