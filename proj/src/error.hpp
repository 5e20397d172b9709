#pragma once

#include <stdexcept>
#include <string>

namespace gdpo {

// Error categories, mirrored 1:1 by the C API status codes.
enum class ErrorKind {
  invalid_argument = 1,  // bad call-site usage (shape mismatch, null handle)
  config = 2,            // malformed or inconsistent configuration
  numeric = 3,           // non-finite values, impossible distributions
  io = 4,                // file read/write failures
  runtime = 5,           // anything else that aborts an operation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
  throw Error(ErrorKind::invalid_argument, msg);
}
[[noreturn]] inline void throw_config(const std::string& msg) {
  throw Error(ErrorKind::config, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(ErrorKind::numeric, msg);
}
[[noreturn]] inline void throw_io(const std::string& msg) {
  throw Error(ErrorKind::io, msg);
}
[[noreturn]] inline void throw_runtime(const std::string& msg) {
  throw Error(ErrorKind::runtime, msg);
}

#define GDPO_REQUIRE(cond, kind, msg)      \
  do {                                     \
    if (!(cond)) throw ::gdpo::Error(kind, msg); \
  } while (0)

}  // namespace gdpo
