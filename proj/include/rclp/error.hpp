#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rclp {

enum class ErrorCode {
  kFormat,
  kValidation,
  kIo,
  kDegenerateInput,
  kDegenerateSpan,
  kDegenerateProjection,
  kSolver,
};

/// Stable machine-readable name, used in CLI error JSON.
constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kFormat: return "format_error";
    case ErrorCode::kValidation: return "validation_error";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kDegenerateInput: return "degenerate_input";
    case ErrorCode::kDegenerateSpan: return "degenerate_span";
    case ErrorCode::kDegenerateProjection: return "degenerate_projection";
    case ErrorCode::kSolver: return "solver_error";
  }
  return "unknown_error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// CG did not reach tolerance; carries the worst relative residual seen.
class SolverError : public Error {
 public:
  SolverError(const std::string& message, double worst_residual)
      : Error(ErrorCode::kSolver, message), worst_residual_(worst_residual) {}

  double worst_residual() const noexcept { return worst_residual_; }

 private:
  double worst_residual_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, std::string_view message) {
  if (!condition) throw Error(code, std::string(message));
}

}  // namespace rclp
