#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tcpl {

enum class ErrorCode {
  ShapeMismatch,
  UnknownPrimitive,
  NonScalarRoot,
  DoubleBackward,
  NonFiniteLoss,
  NonFiniteGradient,
  EmptyTracklet,
  DimensionMismatch,
  InvalidConfig,
  MissingIdentity,
  ParseError,
  TooShort,
  DegeneratePartition,
  InsufficientBatch,
  LabelOutOfRange,
  UninitializedBank,
  EmptyLabeledSet,
  EmptyGalleryAfterFilter,
  NoProbes,
  ProbeWithoutMatch,
  MissingGroundTruth,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownPrimitive: return "UnknownPrimitive";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::DoubleBackward: return "DoubleBackward";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::EmptyTracklet: return "EmptyTracklet";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingIdentity: return "MissingIdentity";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::DegeneratePartition: return "DegeneratePartition";
    case ErrorCode::InsufficientBatch: return "InsufficientBatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::UninitializedBank: return "UninitializedBank";
    case ErrorCode::EmptyLabeledSet: return "EmptyLabeledSet";
    case ErrorCode::EmptyGalleryAfterFilter: return "EmptyGalleryAfterFilter";
    case ErrorCode::NoProbes: return "NoProbes";
    case ErrorCode::ProbeWithoutMatch: return "ProbeWithoutMatch";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// Every failure in the library is reported through this type; `code()` is
// what callers and tests branch on, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace tcpl
