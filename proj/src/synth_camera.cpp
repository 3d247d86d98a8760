#include "msight/synth_camera.hpp"

#include "msight/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace msight {

SyntheticCamera::SyntheticCamera(CameraId id, const Eigen::Vector3d& position, const Eigen::Vector2d& look_at,
                                 double tilt_rad, const FisheyeIntrinsics& intrinsics)
    : id_(id), position_(position), intrinsics_(intrinsics) {
  intrinsics_.validate();
  Eigen::Vector2d toward = look_at - position.head<2>();
  if (toward.norm() == 0.0) toward = Eigen::Vector2d(0.0, 1.0);
  toward.normalize();
  const Eigen::Vector3d forward(std::sin(tilt_rad) * toward.x(), std::sin(tilt_rad) * toward.y(), -std::cos(tilt_rad));
  // Horizontal right vector keeps the image upright as seen from the pole.
  const Eigen::Vector3d right = Eigen::Vector3d(toward.x(), toward.y(), 0.0).cross(Eigen::Vector3d::UnitZ()).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  rotation_.row(0) = right.transpose();
  rotation_.row(1) = down.transpose();
  rotation_.row(2) = forward.transpose();
}

SyntheticCamera SyntheticCamera::standard(CameraId id) {
  FisheyeIntrinsics k;
  k.principal_point = {515.3, 508.7};
  k.focal = 380.0;
  k.k1 = 1.0;
  k.k2 = -0.02;
  k.k3 = 0.001;
  double e = 28.0;
  double n = 28.0;
  switch (id) {
    case CameraId::NE: break;
    case CameraId::NW: e = -e; break;
    case CameraId::SE: n = -n; break;
    case CameraId::SW: e = -e; n = -n; break;
  }
  return SyntheticCamera(id, {e, n, 12.0}, {0.0, 0.0}, 30.0 * std::numbers::pi / 180.0, k);
}

double SyntheticCamera::incidence(const PlanePoint& p) const {
  const Eigen::Vector3d pc = rotation_ * (Eigen::Vector3d(p.east, p.north, 0.0) - position_);
  return std::atan2(pc.head<2>().norm(), pc.z());
}

bool SyntheticCamera::visible(const PlanePoint& p, double max_theta) const {
  return incidence(p) <= max_theta;
}

PixelPoint SyntheticCamera::project(const PlanePoint& p) const {
  const Eigen::Vector3d pc = rotation_ * (Eigen::Vector3d(p.east, p.north, 0.0) - position_);
  if (!(pc.z() > 0.0) || std::atan2(pc.head<2>().norm(), pc.z()) > intrinsics_.theta_max)
    throw Error(Errc::OutOfFieldOfView, "ground point outside the camera field of view");
  return ray_to_pixel(pc.head<2>() / pc.z(), intrinsics_);
}

Homography SyntheticCamera::ground_homography() const {
  // Plane (e, n, 1) -> camera: R * ((e, n, 0) - C) = [r1 r2 -R C] (e, n, 1).
  Eigen::Matrix3d m;
  m.col(0) = rotation_.col(0);
  m.col(1) = rotation_.col(1);
  m.col(2) = -rotation_ * position_;
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = intrinsics_.focal;
  k(1, 1) = intrinsics_.focal;
  k(0, 2) = intrinsics_.principal_point.u;
  k(1, 2) = intrinsics_.principal_point.v;
  return Homography((k * m).inverse());
}

FisheyeIntrinsics nominal_intrinsics() {
  const double half = SyntheticCamera::kImageSize / 2.0;
  return FisheyeIntrinsics::equidistant({half, half}, half);
}

std::vector<LandmarkPair> synth_landmarks(const SyntheticCamera& cam, const LocalFrame& frame, int count,
                                          double sigma_px, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(-50.0, 50.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double max_theta = 70.0 * std::numbers::pi / 180.0;
  std::vector<LandmarkPair> out;
  out.reserve(static_cast<std::size_t>(count));
  // Stratify by incidence so the set spans the lens radius.
  const int bands = 4;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 1000000) throw Error(Errc::InfeasibleConfig, "camera sees too little ground for landmarks");
    const PlanePoint p{coord(rng), coord(rng)};
    if (p.vec().norm() > 50.0) continue;
    const double theta = cam.incidence(p);
    if (!(theta <= max_theta)) continue;
    const int band = static_cast<int>(out.size()) % bands;
    if (static_cast<int>(theta / max_theta * bands) != band) continue;
    bool distinct = true;
    for (const auto& l : out)
      if ((frame.to_plane(l.world).vec() - p.vec()).norm() < 1.0) distinct = false;
    if (!distinct) continue;
    PixelPoint px = cam.project(p);
    px.u += sigma_px * noise(rng);
    px.v += sigma_px * noise(rng);
    out.push_back({px, frame.to_world(p)});
  }
  return out;
}

CameraCalibration exact_calibration(const SyntheticCamera& cam, WorldPoint scene_origin) {
  const LocalFrame frame(scene_origin);
  const auto landmarks = synth_landmarks(cam, frame, 20, 0.0, 1);
  return CameraCalibration::create(cam.id(), cam.intrinsics(), cam.ground_homography(), scene_origin, landmarks);
}

}  // namespace msight
