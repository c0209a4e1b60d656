#pragma once

#include <stdexcept>
#include <string>

namespace vem {

// Input/output failures (unreadable, unwritable or malformed files) and bad
// command lines map to exit code 2; everything else surfaces as a computation
// error with exit code 1.
enum class ErrorKind { io, format, validation, usage, compute };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::io, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::format, w) {}
};
struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorKind::validation, w) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorKind::usage, w) {}
};
struct ComputeError : Error {
  explicit ComputeError(const std::string& w) : Error(ErrorKind::compute, w) {}
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::validation: return "validation";
    case ErrorKind::usage: return "usage";
    case ErrorKind::compute: return "compute";
  }
  return "unknown";
}

}  // namespace vem
