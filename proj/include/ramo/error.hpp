#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ramo {

enum class ErrorCode {
  // persona
  EmptyPool,
  LanguageMismatch,
  // scenario
  IndexOutOfRange,
  NotEligible,
  ParseError,
  // gateway
  AuthError,
  RateLimited,
  TransportError,
  ProviderError,
  MalformedOutput,
  MissingEmotion,
  NonNumericScore,
  // orchestrator
  RunDegraded,
  ProviderFailure,
  ConfigError,
  // metrics
  KTooLarge,
  BadCardinality,
  EmptyInput,
  MissingTarget,
  MissingGroundTruth,
  MissingDefaultCells,
  // store / service / cli
  UnknownSession,
  IoError,
  InvalidKey,
  UnsupportedRegion,
  ValidationError,
  BindError,
};

std::string_view to_string(ErrorCode code);

// Every module reports failures through this one exception type; callers
// switch on code() rather than catching a hierarchy.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace ramo
