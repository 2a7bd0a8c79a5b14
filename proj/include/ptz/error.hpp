#pragma once

#include <stdexcept>
#include <string>

namespace ptz {

enum class ErrorCode {
  TooFewMatches,
  DegenerateConfiguration,
  SingularNormalMatrix,
  AtInfinity,
  NotARotation,
  EmptyMap,
  DimensionMismatch,
  VersionMismatch,
  CorruptPayload,
  DisconnectedGraph,
  DegenerateVanishingGeometry,
  CoincidentPoints,
  InsufficientInliers,
  SingularInnovation,
  NoInliers,
  DegenerateHomology,
  AboveHorizon,
  DegenerateObservation,
  BehindCamera,
  SingularS,
  FrameIndexMismatch,
  ConfigError,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::TooFewMatches: return "TooFewMatches";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::SingularNormalMatrix: return "SingularNormalMatrix";
    case ErrorCode::AtInfinity: return "AtInfinity";
    case ErrorCode::NotARotation: return "NotARotation";
    case ErrorCode::EmptyMap: return "EmptyMap";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptPayload: return "CorruptPayload";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::DegenerateVanishingGeometry: return "DegenerateVanishingGeometry";
    case ErrorCode::CoincidentPoints: return "CoincidentPoints";
    case ErrorCode::InsufficientInliers: return "InsufficientInliers";
    case ErrorCode::SingularInnovation: return "SingularInnovation";
    case ErrorCode::NoInliers: return "NoInliers";
    case ErrorCode::DegenerateHomology: return "DegenerateHomology";
    case ErrorCode::AboveHorizon: return "AboveHorizon";
    case ErrorCode::DegenerateObservation: return "DegenerateObservation";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::SingularS: return "SingularS";
    case ErrorCode::FrameIndexMismatch: return "FrameIndexMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace ptz
