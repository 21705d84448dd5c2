#pragma once

#include <stdexcept>
#include <string>

namespace koopgen {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments: shape mismatch, violated precondition, unsupported combination.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file (bad magic, version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, solver non-convergence, divergent rollouts.
class NumericalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InputError(what);
}

}  // namespace detail
}  // namespace koopgen
