#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lunetkit {

enum class ErrorCode {
  EmptyStructure,
  ShapeMismatch,
  OddSpatialDim,
  OutputTooSmall,
  NotScalarLoss,
  InvalidConfig,
  BoxOutOfBounds,
  GridMismatch,
  EmptyContour,
  IncompleteScores,
  DegenerateRegion,
  NonPositiveEDV,
  LengthMismatch,
  DegenerateSeries,
  InvalidParams,
  InvalidK,
  EmptyDataset,
  DivergedLoss,
  IoFailure,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyStructure: return "EmptyStructure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddSpatialDim: return "OddSpatialDim";
    case ErrorCode::OutputTooSmall: return "OutputTooSmall";
    case ErrorCode::NotScalarLoss: return "NotScalarLoss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BoxOutOfBounds: return "BoxOutOfBounds";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::EmptyContour: return "EmptyContour";
    case ErrorCode::IncompleteScores: return "IncompleteScores";
    case ErrorCode::DegenerateRegion: return "DegenerateRegion";
    case ErrorCode::NonPositiveEDV: return "NonPositiveEDV";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegenerateSeries: return "DegenerateSeries";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace lunetkit
