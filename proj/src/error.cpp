#include "fmwiss/error.hpp"

namespace fmwiss {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDuplicateClass: return "DuplicateClass";
    case ErrorCode::kEmptyStep: return "EmptyStep";
    case ErrorCode::kStepOutOfRange: return "StepOutOfRange";
    case ErrorCode::kUnknownClass: return "UnknownClass";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kEmptyClassSet: return "EmptyClassSet";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kBadPercentage: return "BadPercentage";
    case ErrorCode::kEmptyForeground: return "EmptyForeground";
    case ErrorCode::kBackendFailure: return "BackendFailure";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kNoForeground: return "NoForeground";
    case ErrorCode::kBadTemperature: return "BadTemperature";
    case ErrorCode::kNotOldClass: return "NotOldClass";
    case ErrorCode::kEmptyBank: return "EmptyBank";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kMissingPseudoLabels: return "MissingPseudoLabels";
    case ErrorCode::kIdOutOfRange: return "IdOutOfRange";
    case ErrorCode::kMissingPrerequisite: return "MissingPrerequisite";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace fmwiss
