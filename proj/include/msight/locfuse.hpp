#pragma once

#include "msight/calibration.hpp"
#include "msight/detect.hpp"

#include <map>
#include <span>
#include <vector>

namespace msight {

/// A detection placed on the ground plane.
struct WorldDetection {
  CameraId source = CameraId::NE;
  std::int64_t ts_ms = 0;
  ObjectClass cls = ObjectClass::Car;
  WorldPoint position;
  PlanePoint plane;  // same point in the ROI tangent plane
  double s = 0.0;    // footprint area, m^2
  double r = 1.0;    // east extent / north extent
  double confidence = 1.0;
};

/// 50 m disc around the roundabout center split into four camera quadrants.
struct RoiMap {
  WorldPoint center;
  double radius_m = 50.0;

  LocalFrame frame() const { return LocalFrame(center); }
};

inline constexpr std::int64_t kFuseJitterMs = 50;

/// Maps a detection to the ground. s is the plane area enclosed by the four
/// box corners and r their east/north extent ratio. Throws OutOfFieldOfView if
/// the box center or a corner cannot be mapped or lands outside the ROI disc.
WorldDetection localize(const DetectionRecord& d, const CameraCalibration& c, const RoiMap& roi);

/// Quadrant by offset sign; zero offsets count as east / north. Throws OutsideRoi.
CameraId roi_assign(const WorldPoint& p, const RoiMap& m);
CameraId roi_assign(const PlanePoint& p, const RoiMap& m);

struct FusionResult {
  std::vector<WorldDetection> detections;  // grouped by camera in NE, NW, SE, SW order
  std::vector<CameraId> missing;           // cameras without a frame or calibration
  int rejected = 0;                        // detections that failed localization
};

/// Keeps each camera's detections that fall in its own quadrant. Frames must
/// lie within +-50 ms of ts_ms (InvalidArgument otherwise); absent cameras are
/// reported in `missing` and fusion continues with the rest.
FusionResult fuse(std::int64_t ts_ms, std::span<const DetectionFrame> frames,
                  const std::map<CameraId, CameraCalibration>& calibs, const RoiMap& m,
                  std::span<const CameraId> expected = kAllCameras);

}  // namespace msight
