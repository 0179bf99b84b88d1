#pragma once

#include <stdexcept>
#include <string>

namespace spotfast {

// Categories double as CLI exit codes.
enum class ErrorKind : int {
  Usage = 1,
  Io = 2,
  State = 3,
  Numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

// Contract violations inside the library (bad shapes, bad arguments).
[[noreturn]] inline void invalid(const std::string& what) {
  throw std::invalid_argument(what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) invalid(what);
}

}  // namespace spotfast
