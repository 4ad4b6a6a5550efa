#pragma once

#include <stdexcept>
#include <string>

namespace fastbss {

enum class ErrorKind {
  invalid_input,
  singular_matrix,
  numerical_breakdown,
  degenerate_model,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid input";
    case ErrorKind::singular_matrix: return "singular matrix";
    case ErrorKind::numerical_breakdown: return "numerical breakdown";
    case ErrorKind::degenerate_model: return "degenerate model";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

  /// Same kind, message prefixed with the caller's context.
  Error with_context(const std::string& context) const { return Error(kind_, context + ": " + detail_); }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorKind::invalid_input, what);
}

}  // namespace fastbss
