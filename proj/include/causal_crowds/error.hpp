#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace causal_crowds {

enum class ErrorCode {
  InvalidArgument,
  CoincidentAgents,
  LengthMismatch,
  InsufficientNonCausal,
  RetryExhausted,
  IoFailure,
  ParseError,
  DigestMismatch,
  InvariantViolation,
  UnknownScene,
  UnknownAgent,
  MissingFactual,
  MissingCounterfactual,
  MissingPair,
  ZeroNormEmbedding,
  DivergedLoss,
  DimensionMismatch,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::CoincidentAgents: return "CoincidentAgents";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InsufficientNonCausal: return "InsufficientNonCausal";
    case ErrorCode::RetryExhausted: return "RetryExhausted";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DigestMismatch: return "DigestMismatch";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::UnknownScene: return "UnknownScene";
    case ErrorCode::UnknownAgent: return "UnknownAgent";
    case ErrorCode::MissingFactual: return "MissingFactual";
    case ErrorCode::MissingCounterfactual: return "MissingCounterfactual";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::ZeroNormEmbedding: return "ZeroNormEmbedding";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
  }
  return "Unknown";
}

/// Single exception type for the library; the code identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorCode::InvalidArgument, message);
}

}  // namespace causal_crowds
