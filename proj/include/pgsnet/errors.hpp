#pragma once

#include <stdexcept>
#include <string>

namespace pgsnet {

// Base for every error raised by the library. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated a precondition: bad shape, bad config value, bad flag.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Input files are missing, unreadable, or inconsistent with each other.
class DataError : public Error {
 public:
  using Error::Error;
};

// A loss or gradient became NaN/Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw UsageError(msg);
}

}  // namespace detail
}  // namespace pgsnet
