#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace retention {

enum class ErrorCode {
  MissingColumn,
  BadEventCode,
  NonPositiveWaitingTime,
  OrphanVisit,
  InvalidRecord,
  NonPositiveDelta,
  EmptyStratum,
  NonPositiveTime,
  DimensionMismatch,
  NonFiniteValue,
  AllDivergent,
  TooFewChains,
  UnknownStratum,
  SingularInformation,
  OneClassOnly,
  LengthMismatch,
  ArtifactLoadError,
  BindError,
  InvalidArgument,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception; `code()` is the
// machine-readable part used by the CLI and the HTTP service.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view code_name() const { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace retention
