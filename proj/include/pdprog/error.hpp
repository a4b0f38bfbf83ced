#pragma once

#include <stdexcept>
#include <string>

namespace pdprog {

/// Failure categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  kUsage,      // bad arguments or configuration
  kData,       // malformed or insufficient data
  kNumerical,  // non-finite values, failed gradient checks
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Short machine-readable tag, e.g. "MissingColumn".
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

inline Error usage_error(std::string code, const std::string& msg) {
  return Error(ErrorKind::kUsage, std::move(code), msg);
}
inline Error data_error(std::string code, const std::string& msg) {
  return Error(ErrorKind::kData, std::move(code), msg);
}
inline Error numerical_error(std::string code, const std::string& msg) {
  return Error(ErrorKind::kNumerical, std::move(code), msg);
}
inline Error io_error(const std::string& msg) { return Error(ErrorKind::kIo, "IoError", msg); }

}  // namespace pdprog
