#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace msight {

/// Failure categories shared by every module. Each value maps to one named
/// error condition of an operation's contract.
enum class Errc {
  InvalidArgument,
  IoError,
  // geometry / calibration
  NonInvertibleRadius,
  OutOfFieldOfView,
  DegenerateConfiguration,
  InsufficientInliers,
  InsufficientData,
  EmptySet,
  CalibrationGateExceeded,
  // image alignment
  EmptyImage,
  FlatImage,
  SizeMismatch,
  Diverged,
  SingularTransform,
  // detection / localization
  ParseError,
  NonMonotoneTimestamp,
  OutsideRoi,
  MissingCamera,
  // tracking / prediction
  CovarianceNotSPD,
  ShapeMismatch,
  GraphNotRecorded,
  DegenerateHeading,
  // v2x
  RangeOverflow,
  BadMagic,
  BadCrc,
  TruncatedMessage,
  UnsupportedVersion,
  EndpointUnavailable,
  ClockSkewDetected,
  // cloud
  InvalidTopic,
  InvalidFilter,
  StorageUnavailable,
  // evaluation
  EmptyDenominator,
  InfeasibleConfig,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace msight
