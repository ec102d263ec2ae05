#pragma once

#include <stdexcept>
#include <string>

namespace slidelm {

/// Base class for every error raised by the library. Callers that only need
/// to distinguish "bad input" from "bad data on disk" can catch the two
/// subclasses below.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on arguments or configuration was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Persisted data could not be decoded.
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kTruncated, kDimMismatch, kSchema, kIo };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline void require(bool cond, const std::string& message) {
  if (!cond) throw InvalidArgument(message);
}

}  // namespace slidelm
