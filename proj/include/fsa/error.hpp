#pragma once

#include <stdexcept>
#include <string>

namespace fsa {

enum class ErrorKind {
  Shape,
  DegenerateRow,
  DegenerateVector,
  Validation,
  MetricUndefined,
  Config,
  Io,
  BadMagic,
  VersionMismatch,
  Truncated,
  NonFinite,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Exit code used by the command-line tool for each error class:
// 1 = configuration, 2 = file/format, 3 = numeric validation.
int exit_code(ErrorKind kind);

}  // namespace fsa
