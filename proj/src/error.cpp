#include "ramo/error.hpp"

namespace ramo {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::LanguageMismatch: return "LanguageMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NotEligible: return "NotEligible";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::MalformedOutput: return "MalformedOutput";
    case ErrorCode::MissingEmotion: return "MissingEmotion";
    case ErrorCode::NonNumericScore: return "NonNumericScore";
    case ErrorCode::RunDegraded: return "RunDegraded";
    case ErrorCode::ProviderFailure: return "ProviderFailure";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::BadCardinality: return "BadCardinality";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingTarget: return "MissingTarget";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::MissingDefaultCells: return "MissingDefaultCells";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidKey: return "InvalidKey";
    case ErrorCode::UnsupportedRegion: return "UnsupportedRegion";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::BindError: return "BindError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code),
      detail_(detail) {}

}  // namespace ramo
