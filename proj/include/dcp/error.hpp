#pragma once

#include <stdexcept>
#include <string>

namespace dcp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller input: sizes, ranges, config invariants.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable table / config / model file.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& message) {
  if (!cond) throw InvalidArgument(message);
}

}  // namespace detail
}  // namespace dcp
