#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ttsa {

enum class ErrorCode {
  DimensionMismatch,
  NonFinite,
  NotHurwitz,
  NonConvergence,
  IndexOutOfRange,
  NoLimit,
  Unsupported,
  InvalidArgument,
  SingularInnerJacobian,
  SingularB1,
  IdentityViolation,
  CholeskyFailure,
  Diverged,
  TooManyDivergences,
  InsufficientValues,
  InsufficientSamples,
  OutOfHorizon,
  NonPositiveInput,
  ConfigError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NotHurwitz: return "NotHurwitz";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NoLimit: return "NoLimit";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SingularInnerJacobian: return "SingularInnerJacobian";
    case ErrorCode::SingularB1: return "SingularB1";
    case ErrorCode::IdentityViolation: return "IdentityViolation";
    case ErrorCode::CholeskyFailure: return "CholeskyFailure";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::TooManyDivergences: return "TooManyDivergences";
    case ErrorCode::InsufficientValues: return "InsufficientValues";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::OutOfHorizon: return "OutOfHorizon";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace ttsa
