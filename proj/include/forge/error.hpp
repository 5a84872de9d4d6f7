#pragma once

#include <stdexcept>
#include <string>

namespace forge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented invariant. Message names the offending field.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite objective, singular system, and similar numerical failures.
class NumericalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

[[noreturn]] inline void fail_validation(const std::string& field, const std::string& what) {
  throw ValidationError(field + ": " + what);
}

inline void require(bool cond, const std::string& field, const std::string& what) {
  if (!cond) {
    fail_validation(field, what);
  }
}

} // namespace detail

} // namespace forge
