#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace routenav {

enum class ErrorKind {
  config,
  format,
  io,
  alignment,
  shape,
  bounds,
  numeric,
  rank,
  degenerate_data,
  contract,
  schema,
  usage,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so the CLI can map it to
// a stable exit code and a one-line machine-parseable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace routenav
