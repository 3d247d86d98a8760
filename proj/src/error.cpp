#include "msight/error.hpp"

namespace msight {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
    case Errc::NonInvertibleRadius: return "NonInvertibleRadius";
    case Errc::OutOfFieldOfView: return "OutOfFieldOfView";
    case Errc::DegenerateConfiguration: return "DegenerateConfiguration";
    case Errc::InsufficientInliers: return "InsufficientInliers";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::EmptySet: return "EmptySet";
    case Errc::CalibrationGateExceeded: return "CalibrationGateExceeded";
    case Errc::EmptyImage: return "EmptyImage";
    case Errc::FlatImage: return "FlatImage";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::Diverged: return "Diverged";
    case Errc::SingularTransform: return "SingularTransform";
    case Errc::ParseError: return "ParseError";
    case Errc::NonMonotoneTimestamp: return "NonMonotoneTimestamp";
    case Errc::OutsideRoi: return "OutsideRoi";
    case Errc::MissingCamera: return "MissingCamera";
    case Errc::CovarianceNotSPD: return "CovarianceNotSPD";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::GraphNotRecorded: return "GraphNotRecorded";
    case Errc::DegenerateHeading: return "DegenerateHeading";
    case Errc::RangeOverflow: return "RangeOverflow";
    case Errc::BadMagic: return "BadMagic";
    case Errc::BadCrc: return "BadCrc";
    case Errc::TruncatedMessage: return "TruncatedMessage";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::EndpointUnavailable: return "EndpointUnavailable";
    case Errc::ClockSkewDetected: return "ClockSkewDetected";
    case Errc::InvalidTopic: return "InvalidTopic";
    case Errc::InvalidFilter: return "InvalidFilter";
    case Errc::StorageUnavailable: return "StorageUnavailable";
    case Errc::EmptyDenominator: return "EmptyDenominator";
    case Errc::InfeasibleConfig: return "InfeasibleConfig";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace msight
