#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hosar {

enum class ErrorCode {
  InvalidDesign,
  Parse,
  Io,
  Validation,
  SingularModel,
  NonpositiveDeterminant,
  Conditioning,
  WeakInstrument,
  UnderIdentified,
  StepFailure,
  OptimizationFailure,
  DegenerateInference,
};

/// Numerical failures map to CLI exit code 3, everything else to 2.
constexpr bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::SingularModel:
    case ErrorCode::NonpositiveDeterminant:
    case ErrorCode::Conditioning:
    case ErrorCode::WeakInstrument:
    case ErrorCode::UnderIdentified:
    case ErrorCode::StepFailure:
    case ErrorCode::OptimizationFailure:
    case ErrorCode::DegenerateInference:
      return true;
    default:
      return false;
  }
}

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidDesign: return "invalid-design";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Io: return "io";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::SingularModel: return "singular-model";
    case ErrorCode::NonpositiveDeterminant: return "nonpositive-determinant";
    case ErrorCode::Conditioning: return "conditioning";
    case ErrorCode::WeakInstrument: return "weak-instrument";
    case ErrorCode::UnderIdentified: return "under-identified";
    case ErrorCode::StepFailure: return "step-failure";
    case ErrorCode::OptimizationFailure: return "optimization-failure";
    case ErrorCode::DegenerateInference: return "degenerate-inference";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hosar
