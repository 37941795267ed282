#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fmwiss {

enum class ErrorCode {
  kInvalidArgument,
  kDuplicateClass,
  kEmptyStep,
  kStepOutOfRange,
  kUnknownClass,
  kZeroVector,
  kEmptyClassSet,
  kDimMismatch,
  kShapeMismatch,
  kBadPercentage,
  kEmptyForeground,
  kBackendFailure,
  kIoError,
  kFormatError,
  kNoForeground,
  kBadTemperature,
  kNotOldClass,
  kEmptyBank,
  kNonFinite,
  kMissingPseudoLabels,
  kIdOutOfRange,
  kMissingPrerequisite,
  kConfigError,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception; `code()` identifies the
// failure class named in the module contracts.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace fmwiss
