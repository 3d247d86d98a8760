#pragma once

#include "msight/geo.hpp"

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace msight {

/// One human-labeled landmark: where it appears in the fisheye image and where
/// it sits on the satellite map.
struct LandmarkPair {
  PixelPoint pixel;
  WorldPoint world;
};

inline constexpr double kDefaultCalibrationGateM = 1.0;

/// Everything needed to map a fisheye pixel of one camera to the ground.
/// Immutable; construction enforces the landmark error gate.
class CameraCalibration {
 public:
  /// Computes the mean landmark error and throws CalibrationGateExceeded above gate_m.
  static CameraCalibration create(CameraId id, const FisheyeIntrinsics& intrinsics,
                                  const Homography& homography, WorldPoint scene_origin,
                                  std::span<const LandmarkPair> landmarks,
                                  double gate_m = kDefaultCalibrationGateM);
  /// Rebuilds a calibration whose error was measured elsewhere (stored artifacts, fixtures).
  static CameraCalibration restore(CameraId id, const FisheyeIntrinsics& intrinsics,
                                   const Homography& homography, WorldPoint scene_origin,
                                   double mean_error_m, double gate_m = kDefaultCalibrationGateM);

  CameraId camera_id() const { return id_; }
  const FisheyeIntrinsics& intrinsics() const { return intrinsics_; }
  /// Undistorted pixel -> tangent-plane meters.
  const Homography& homography() const { return homography_; }
  const LocalFrame& frame() const { return frame_; }
  WorldPoint scene_origin() const { return frame_.origin(); }
  double mean_error_m() const { return mean_error_m_; }

  PlanePoint pixel_to_plane(const PixelPoint& p) const;
  /// Inverse mapping; throws OutOfFieldOfView for ground points behind the
  /// camera or outside the lens field of view.
  PixelPoint plane_to_pixel(const PlanePoint& p) const;

 private:
  CameraCalibration(CameraId id, const FisheyeIntrinsics& intrinsics, const Homography& homography,
                    WorldPoint scene_origin);

  CameraId id_;
  FisheyeIntrinsics intrinsics_;
  Homography homography_;
  Homography inverse_;
  LocalFrame frame_;
  double front_sign_ = 1.0;
  double mean_error_m_ = 0.0;
};

/// undistort -> homography -> tangent plane -> lat/lon.
WorldPoint pixel_to_world(const PixelPoint& p, const CameraCalibration& c);

/// Mean tangent-plane distance between mapped landmark pixels and their world points.
double calibration_error(std::span<const LandmarkPair> pairs, const CameraCalibration& c);

struct IntrinsicsOptions {
  int max_iterations = 200;
  double step_tolerance = 1e-10;
  /// Landmarks must reach at least this fraction of the image radius.
  double min_radius_coverage = 0.6;
  int min_pairs = 10;
};

struct IntrinsicsFit {
  FisheyeIntrinsics intrinsics;
  Homography homography;  // undistorted pixel -> plane meters
  double initial_rms_m = 0.0;
  double final_rms_m = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string diagnostic;
};

/// Joint Levenberg-Marquardt over focal length, principal point, k2, k3 and the
/// ground homography, minimizing tangent-plane reprojection error. k1 is held
/// at its initial value: focal and k1 only enter the image through their product.
/// On NonConvergence the best iterate is returned with converged = false.
IntrinsicsFit estimate_intrinsics(std::span<const Correspondence> pairs, const FisheyeIntrinsics& init,
                                  const IntrinsicsOptions& opts = {});
IntrinsicsFit estimate_intrinsics(std::span<const LandmarkPair> pairs, const FisheyeIntrinsics& init,
                                  const LocalFrame& frame, const IntrinsicsOptions& opts = {});

struct CalibrationOptions {
  RansacOptions ransac{};
  IntrinsicsOptions intrinsics{};
  bool refine_intrinsics = true;
  double gate_m = kDefaultCalibrationGateM;
};

struct CalibrationResult {
  CameraCalibration calibration;
  std::vector<bool> inliers;
  IntrinsicsFit intrinsics_fit;
};

/// Full landmark calibration for one camera: intrinsics refinement, RANSAC
/// homography, and the error gate (measured on the consensus set).
CalibrationResult calibrate(CameraId id, std::span<const LandmarkPair> landmarks,
                            const FisheyeIntrinsics& init, WorldPoint scene_origin,
                            const CalibrationOptions& opts = {});

// Landmark CSV: camera_id,u_px,v_px,lat_deg,lon_deg
std::map<CameraId, std::vector<LandmarkPair>> read_landmarks_csv(std::istream& in);
void write_landmarks_csv(std::ostream& out, const std::map<CameraId, std::vector<LandmarkPair>>& sets);

// Versioned calibration artifact (JSON).
std::string calibration_to_json(const CameraCalibration& c);
CameraCalibration calibration_from_json(std::string_view text, double gate_m = kDefaultCalibrationGateM);

}  // namespace msight
