#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qb {

enum class ErrorCode {
  invalid_shape,
  invalid_value,
  invalid_config,
  parameter_error,
  shape_mismatch,
  scheme_error,
  corrupt_data,
  bad_magic,
  version_mismatch,
  truncated,
  checksum_mismatch,
  io_error,
  math_error,
  resource_error,
  capability_error,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries one of the codes above so
// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_shape: return "invalid-shape";
    case ErrorCode::invalid_value: return "invalid-value";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::parameter_error: return "parameter-error";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::scheme_error: return "scheme-error";
    case ErrorCode::corrupt_data: return "corrupt-data";
    case ErrorCode::bad_magic: return "bad-magic";
    case ErrorCode::version_mismatch: return "version-mismatch";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::checksum_mismatch: return "checksum-mismatch";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::math_error: return "math-error";
    case ErrorCode::resource_error: return "resource-error";
    case ErrorCode::capability_error: return "capability-error";
  }
  return "unknown";
}

}  // namespace qb
