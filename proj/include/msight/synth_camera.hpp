#pragma once

#include "msight/calibration.hpp"
#include "msight/geo.hpp"

#include <cstdint>
#include <vector>

namespace msight {

/// Pole-mounted fisheye camera over a flat ground plane. Serves as the
/// ground-truth optics for simulated scenes: projecting the plane through it is
/// exact, so a perfect calibration reproduces it to rounding.
class SyntheticCamera {
 public:
  SyntheticCamera(CameraId id, const Eigen::Vector3d& position, const Eigen::Vector2d& look_at,
                  double tilt_rad, const FisheyeIntrinsics& intrinsics);

  /// Default rig: four corners of the roundabout, 12 m poles, 30 degree tilt.
  static SyntheticCamera standard(CameraId id);
  static constexpr int kImageSize = 1024;

  CameraId id() const { return id_; }
  const FisheyeIntrinsics& intrinsics() const { return intrinsics_; }
  const Eigen::Vector3d& position() const { return position_; }

  /// Throws OutOfFieldOfView for ground points behind the lens or beyond theta_max.
  PixelPoint project(const PlanePoint& p) const;
  bool visible(const PlanePoint& p, double max_theta) const;
  /// Angle between the optical axis and the ray to p.
  double incidence(const PlanePoint& p) const;
  /// Exact undistorted-pixel -> plane map.
  Homography ground_homography() const;

 private:
  CameraId id_;
  Eigen::Vector3d position_;
  Eigen::Matrix3d rotation_;  // rows: camera x (right), y (down), z (optical axis) in ENU
  FisheyeIntrinsics intrinsics_;
};

/// Initial lens guess used before calibration: equidistant, focal from the field of view.
FisheyeIntrinsics nominal_intrinsics();

/// Ground landmarks visible to the camera, spread over the lens radius, with
/// Gaussian labeling noise of sigma_px on the pixel side.
std::vector<LandmarkPair> synth_landmarks(const SyntheticCamera& cam, const LocalFrame& frame, int count,
                                          double sigma_px, std::uint64_t seed);

/// Calibration that matches the camera exactly (mean error measured on synthetic landmarks).
CameraCalibration exact_calibration(const SyntheticCamera& cam, WorldPoint scene_origin);

inline constexpr WorldPoint kDefaultSceneOrigin{42.2286, -83.7399};

}  // namespace msight
