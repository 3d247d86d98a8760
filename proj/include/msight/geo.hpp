#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace msight {

/// Image position in pixels (u to the right, v down).
struct PixelPoint {
  double u = 0.0;
  double v = 0.0;

  Eigen::Vector2d vec() const { return {u, v}; }
  static PixelPoint from(const Eigen::Vector2d& p) { return {p.x(), p.y()}; }
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

/// Position on the local east/north tangent plane, meters.
struct PlanePoint {
  double east = 0.0;
  double north = 0.0;

  Eigen::Vector2d vec() const { return {east, north}; }
  static PlanePoint from(const Eigen::Vector2d& p) { return {p.x(), p.y()}; }
  friend bool operator==(const PlanePoint&, const PlanePoint&) = default;
};

/// WGS84 latitude/longitude in degrees.
struct WorldPoint {
  double lat = 0.0;
  double lon = 0.0;

  bool valid() const;
  friend bool operator==(const WorldPoint&, const WorldPoint&) = default;
};

/// Equirectangular tangent plane anchored at a scene origin. Accurate to well
/// under a millimetre over the ~100 m extent of a roundabout.
class LocalFrame {
 public:
  LocalFrame() = default;
  explicit LocalFrame(WorldPoint origin);

  const WorldPoint& origin() const { return origin_; }
  PlanePoint to_plane(const WorldPoint& w) const;
  WorldPoint to_world(const PlanePoint& p) const;

 private:
  WorldPoint origin_{};
  double meters_per_deg_lat_ = 0.0;
  double meters_per_deg_lon_ = 0.0;
};

enum class CameraId : std::uint8_t { NE = 0, NW = 1, SE = 2, SW = 3 };

inline constexpr CameraId kAllCameras[] = {CameraId::NE, CameraId::NW, CameraId::SE, CameraId::SW};

std::string_view to_string(CameraId id);
CameraId camera_from_string(std::string_view s);

inline constexpr double kDefaultThetaMax = 1.3962634015954636;  // 80 degrees

/// Radially symmetric fisheye lens: a ray at angle theta from the optical axis
/// lands at distance focal * r(theta) from the principal point, with
/// r(theta) = k1*theta + k2*theta^3 + k3*theta^5.
struct FisheyeIntrinsics {
  PixelPoint principal_point{};
  double focal = 1.0;
  double k1 = 1.0;
  double k2 = 0.0;
  double k3 = 0.0;
  double theta_max = kDefaultThetaMax;

  double radius(double theta) const;
  double radius_derivative(double theta) const;
  /// Numeric check that r(theta) strictly increases on [0, theta_max].
  bool is_monotonic(int samples = 1024) const;
  /// Throws NonInvertibleRadius if the lens model cannot be inverted.
  void validate() const;

  /// Equidistant lens (k1 = 1) whose field of view theta_max reaches image_radius pixels.
  static FisheyeIntrinsics equidistant(PixelPoint center, double image_radius_px,
                                       double theta_max = kDefaultThetaMax);
};

/// Maps a fisheye pixel onto the ideal pinhole image with the same focal length.
PixelPoint undistort_point(const PixelPoint& p, const FisheyeIntrinsics& k);
/// Inverse of undistort_point.
PixelPoint distort_point(const PixelPoint& p, const FisheyeIntrinsics& k);
/// Incoming ray of a fisheye pixel as normalized pinhole coordinates (x/z, y/z).
Eigen::Vector2d pixel_to_ray(const PixelPoint& p, const FisheyeIntrinsics& k);
/// Fisheye pixel of a normalized ray; the ray must lie within theta_max.
PixelPoint ray_to_pixel(const Eigen::Vector2d& ray, const FisheyeIntrinsics& k);

/// Projective map from the undistorted image to the plane.
class Homography {
 public:
  Homography() : h_(Eigen::Matrix3d::Identity()) {}
  /// Normalizes so h(2,2) = 1 when nonzero; throws DegenerateConfiguration when singular.
  explicit Homography(const Eigen::Matrix3d& h);

  const Eigen::Matrix3d& matrix() const { return h_; }
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const;
  /// Homogeneous image (not dehomogenized).
  Eigen::Vector3d apply_h(const Eigen::Vector2d& p) const;
  Homography inverse() const;

 private:
  Eigen::Matrix3d h_;
};

struct Correspondence {
  PixelPoint pixel;
  PlanePoint plane;
};

struct RansacOptions {
  int iterations = 2000;
  double inlier_threshold_m = 0.5;
  int min_inliers = 4;
  std::uint64_t seed = 0x5eed;
  /// Minimal samples whose triangles are smaller than this fraction of the
  /// point-set extent are rejected as collinear.
  double degeneracy_ratio = 1e-6;
  /// Early exit once a sample free of outliers has been drawn with this probability.
  double confidence = 0.9999;
};

struct HomographyFit {
  Homography homography;
  std::vector<bool> inliers;
  int inlier_count = 0;
  double rms_m = 0.0;
};

/// RANSAC over minimal 4-point samples, then a least-squares refit on the
/// consensus set (normalized DLT followed by Gauss-Newton on the plane residual).
HomographyFit fit_homography(std::span<const Correspondence> pairs, const RansacOptions& opts = {});

/// Normalized DLT over all pairs; exposed for tests and tools.
Eigen::Matrix3d homography_dlt(std::span<const Eigen::Vector2d> src, std::span<const Eigen::Vector2d> dst);

}  // namespace msight
