#include "msight/calibration.hpp"

#include "msight/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace msight {

CameraCalibration::CameraCalibration(CameraId id, const FisheyeIntrinsics& intrinsics,
                                     const Homography& homography, WorldPoint scene_origin)
    : id_(id),
      intrinsics_(intrinsics),
      homography_(homography),
      inverse_(homography.inverse()),
      frame_(scene_origin) {
  intrinsics_.validate();
  // The principal ray hits the ground in front of the camera; ground points
  // on the same side of the camera plane share its homogeneous sign.
  const Eigen::Vector3d ground = homography_.apply_h(intrinsics_.principal_point.vec());
  if (std::abs(ground.z()) > 0.0) {
    const Eigen::Vector3d back = inverse_.apply_h(ground.hnormalized());
    front_sign_ = back.z() >= 0.0 ? 1.0 : -1.0;
  }
}

CameraCalibration CameraCalibration::create(CameraId id, const FisheyeIntrinsics& intrinsics,
                                            const Homography& homography, WorldPoint scene_origin,
                                            std::span<const LandmarkPair> landmarks, double gate_m) {
  CameraCalibration c(id, intrinsics, homography, scene_origin);
  c.mean_error_m_ = calibration_error(landmarks, c);
  if (!(c.mean_error_m_ <= gate_m)) {
    std::ostringstream msg;
    msg << "camera " << to_string(id) << " mean landmark error " << c.mean_error_m_ << " m exceeds gate "
        << gate_m << " m";
    throw Error(Errc::CalibrationGateExceeded, msg.str());
  }
  return c;
}

CameraCalibration CameraCalibration::restore(CameraId id, const FisheyeIntrinsics& intrinsics,
                                             const Homography& homography, WorldPoint scene_origin,
                                             double mean_error_m, double gate_m) {
  if (!(mean_error_m >= 0.0) || !(mean_error_m <= gate_m))
    throw Error(Errc::CalibrationGateExceeded, "recorded calibration error outside gate");
  CameraCalibration c(id, intrinsics, homography, scene_origin);
  c.mean_error_m_ = mean_error_m;
  return c;
}

PlanePoint CameraCalibration::pixel_to_plane(const PixelPoint& p) const {
  const PixelPoint undistorted = undistort_point(p, intrinsics_);
  const Eigen::Vector3d q = homography_.apply_h(undistorted.vec());
  if (q.z() == 0.0) throw Error(Errc::OutOfFieldOfView, "pixel maps to the horizon");
  return PlanePoint::from(q.hnormalized());
}

PixelPoint CameraCalibration::plane_to_pixel(const PlanePoint& p) const {
  const Eigen::Vector3d q = inverse_.apply_h(p.vec());
  if (!(q.z() * front_sign_ > 0.0)) throw Error(Errc::OutOfFieldOfView, "ground point behind the camera");
  const PixelPoint undistorted = PixelPoint::from(q.hnormalized());
  return distort_point(undistorted, intrinsics_);
}

WorldPoint pixel_to_world(const PixelPoint& p, const CameraCalibration& c) {
  return c.frame().to_world(c.pixel_to_plane(p));
}

double calibration_error(std::span<const LandmarkPair> pairs, const CameraCalibration& c) {
  if (pairs.empty()) throw Error(Errc::EmptySet, "no landmark pairs");
  double sum = 0.0;
  for (const auto& pair : pairs) {
    const PlanePoint mapped = c.pixel_to_plane(pair.pixel);
    const PlanePoint truth = c.frame().to_plane(pair.world);
    sum += (mapped.vec() - truth.vec()).norm();
  }
  return sum / static_cast<double>(pairs.size());
}

namespace {

constexpr int kIntrinsicParams = 5;  // focal, cx, cy, k2, k3
constexpr int kParams = kIntrinsicParams + 8;
using ParamVec = Eigen::Matrix<double, kParams, 1>;

FisheyeIntrinsics unpack_intrinsics(const ParamVec& p, const FisheyeIntrinsics& base) {
  FisheyeIntrinsics k = base;
  k.focal = p(0);
  k.principal_point = {p(1), p(2)};
  k.k2 = p(3);
  k.k3 = p(4);
  return k;
}

Eigen::Matrix3d unpack_ray_homography(const ParamVec& p) {
  Eigen::Matrix3d h;
  h << p(5), p(6), p(7), p(8), p(9), p(10), p(11), p(12), 1.0;
  return h;
}

// Plane points are centered and scaled for conditioning; residuals are
// converted back to meters.
struct Problem {
  std::vector<Eigen::Vector2d> pixels;
  std::vector<Eigen::Vector2d> plane_n;
  Eigen::Vector2d plane_center;
  double plane_scale = 1.0;  // normalized = (plane - center) * scale
  FisheyeIntrinsics base;

  // Returns false if any landmark falls outside the lens model.
  bool residuals(const ParamVec& p, Eigen::VectorXd& r) const {
    r.resize(static_cast<Eigen::Index>(2 * pixels.size()));
    const FisheyeIntrinsics k = unpack_intrinsics(p, base);
    if (!(k.focal > 0.0) || k.radius_derivative(k.theta_max) <= 0.0 || k.radius_derivative(0.5 * k.theta_max) <= 0.0)
      return false;
    const Eigen::Matrix3d h = unpack_ray_homography(p);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      Eigen::Vector2d ray;
      try {
        ray = pixel_to_ray(PixelPoint::from(pixels[i]), k);
      } catch (const Error&) {
        return false;
      }
      const Eigen::Vector3d q = h * ray.homogeneous();
      if (q.z() == 0.0) return false;
      const Eigen::Vector2d e = (q.hnormalized() - plane_n[i]) / plane_scale;
      r(static_cast<Eigen::Index>(2 * i)) = e.x();
      r(static_cast<Eigen::Index>(2 * i + 1)) = e.y();
    }
    return r.allFinite();
  }
};

double rms(const Eigen::VectorXd& r) {
  return r.size() == 0 ? 0.0 : std::sqrt(r.squaredNorm() / (0.5 * static_cast<double>(r.size())));
}

}  // namespace

IntrinsicsFit estimate_intrinsics(std::span<const Correspondence> pairs, const FisheyeIntrinsics& init,
                                  const IntrinsicsOptions& opts) {
  init.validate();
  if (static_cast<int>(pairs.size()) < opts.min_pairs)
    throw Error(Errc::InsufficientData, "intrinsic estimation needs at least " + std::to_string(opts.min_pairs) +
                                            " landmark pairs");
  const double image_radius = init.focal * init.radius(init.theta_max);
  double reach = 0.0;
  for (const auto& c : pairs) reach = std::max(reach, (c.pixel.vec() - init.principal_point.vec()).norm());
  if (reach < opts.min_radius_coverage * image_radius)
    throw Error(Errc::InsufficientData, "landmarks do not span enough of the image radius");

  Problem prob;
  prob.base = init;
  prob.plane_center.setZero();
  for (const auto& c : pairs) {
    prob.pixels.push_back(c.pixel.vec());
    prob.plane_center += c.plane.vec();
  }
  prob.plane_center /= static_cast<double>(pairs.size());
  double spread = 0.0;
  for (const auto& c : pairs) spread += (c.plane.vec() - prob.plane_center).norm();
  spread /= static_cast<double>(pairs.size());
  prob.plane_scale = spread > 0.0 ? 1.0 / spread : 1.0;
  for (const auto& c : pairs) prob.plane_n.push_back((c.plane.vec() - prob.plane_center) * prob.plane_scale);

  // Initial homography from the rays of the initial lens model.
  std::vector<Eigen::Vector2d> rays;
  rays.reserve(pairs.size());
  for (const auto& c : pairs) rays.push_back(pixel_to_ray(c.pixel, init));
  Eigen::Matrix3d h0 = homography_dlt(rays, prob.plane_n);
  if (std::abs(h0(2, 2)) < 1e-12) throw Error(Errc::DegenerateConfiguration, "landmark centroid maps to infinity");
  h0 /= h0(2, 2);

  ParamVec p;
  p << init.focal, init.principal_point.u, init.principal_point.v, init.k2, init.k3, h0(0, 0), h0(0, 1), h0(0, 2),
      h0(1, 0), h0(1, 1), h0(1, 2), h0(2, 0), h0(2, 1);

  Eigen::VectorXd r;
  if (!prob.residuals(p, r)) throw Error(Errc::OutOfFieldOfView, "landmark outside the initial lens model");

  IntrinsicsFit fit;
  fit.initial_rms_m = rms(r);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  const ParamVec scale = (ParamVec() << 1.0, 1.0, 1.0, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3)
                             .finished();

  const auto m = r.size();
  Eigen::MatrixXd jac(m, kParams);
  Eigen::VectorXd rp;
  Eigen::VectorXd rm;
  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    if (cost == 0.0) {
      fit.converged = true;
      break;
    }
    bool jac_ok = true;
    for (int j = 0; j < kParams && jac_ok; ++j) {
      const double h = 1e-6 * std::max(std::abs(p(j)), scale(j));
      ParamVec pp = p;
      ParamVec pm = p;
      pp(j) += h;
      pm(j) -= h;
      const bool okp = prob.residuals(pp, rp);
      const bool okm = prob.residuals(pm, rm);
      if (okp && okm)
        jac.col(j) = (rp - rm) / (2.0 * h);
      else if (okp)
        jac.col(j) = (rp - r) / h;
      else if (okm)
        jac.col(j) = (r - rm) / h;
      else
        jac_ok = false;
    }
    if (!jac_ok) {
      fit.diagnostic = "jacobian evaluation left the lens model domain";
      break;
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;
    bool accepted = false;
    double step_norm = 0.0;
    while (lambda < 1e12) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const ParamVec step = a.ldlt().solve(-jtr);
      const ParamVec candidate = p + step;
      Eigen::VectorXd rc;
      if (prob.residuals(candidate, rc) && rc.squaredNorm() < cost) {
        step_norm = (step.array() / p.cwiseAbs().cwiseMax(scale).array()).matrix().norm();
        p = candidate;
        r = rc;
        cost = rc.squaredNorm();
        lambda = std::max(lambda * 0.2, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 8.0;
    }
    if (!accepted) {
      // No descent direction left: a stationary point of the reprojection error.
      fit.converged = true;
      break;
    }
    if (step_norm < opts.step_tolerance) {
      fit.converged = true;
      ++iter;
      break;
    }
  }
  fit.iterations = iter;
  if (!fit.converged && fit.diagnostic.empty())
    fit.diagnostic = "NonConvergence: iteration budget exhausted; returning best iterate";

  fit.intrinsics = unpack_intrinsics(p, init);
  fit.final_rms_m = rms(r);
  // Undistorted pixel -> plane: un-normalize the plane frame and fold in K^-1.
  Eigen::Matrix3d k_inv = Eigen::Matrix3d::Identity();
  k_inv(0, 0) = 1.0 / fit.intrinsics.focal;
  k_inv(1, 1) = 1.0 / fit.intrinsics.focal;
  k_inv(0, 2) = -fit.intrinsics.principal_point.u / fit.intrinsics.focal;
  k_inv(1, 2) = -fit.intrinsics.principal_point.v / fit.intrinsics.focal;
  Eigen::Matrix3d denorm = Eigen::Matrix3d::Identity();
  denorm(0, 0) = 1.0 / prob.plane_scale;
  denorm(1, 1) = 1.0 / prob.plane_scale;
  denorm(0, 2) = prob.plane_center.x();
  denorm(1, 2) = prob.plane_center.y();
  fit.homography = Homography(denorm * unpack_ray_homography(p) * k_inv);
  return fit;
}

IntrinsicsFit estimate_intrinsics(std::span<const LandmarkPair> pairs, const FisheyeIntrinsics& init,
                                  const LocalFrame& frame, const IntrinsicsOptions& opts) {
  std::vector<Correspondence> corr;
  corr.reserve(pairs.size());
  for (const auto& p : pairs) corr.push_back({p.pixel, frame.to_plane(p.world)});
  return estimate_intrinsics(corr, init, opts);
}

namespace {

std::vector<Correspondence> undistorted_pairs(std::span<const Correspondence> pairs, const FisheyeIntrinsics& k) {
  std::vector<Correspondence> out;
  out.reserve(pairs.size());
  for (const auto& c : pairs) out.push_back({undistort_point(c.pixel, k), c.plane});
  return out;
}

template <typename T>
std::vector<T> select(std::span<const T> items, const std::vector<bool>& mask) {
  std::vector<T> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (mask[i]) out.push_back(items[i]);
  return out;
}

}  // namespace

CalibrationResult calibrate(CameraId id, std::span<const LandmarkPair> landmarks, const FisheyeIntrinsics& init,
                            WorldPoint scene_origin, const CalibrationOptions& opts) {
  if (landmarks.empty()) throw Error(Errc::EmptySet, "no landmarks for camera " + std::string(to_string(id)));
  const LocalFrame frame(scene_origin);
  std::vector<Correspondence> corr;
  corr.reserve(landmarks.size());
  for (const auto& l : landmarks) corr.push_back({l.pixel, frame.to_plane(l.world)});

  FisheyeIntrinsics intr = init;
  IntrinsicsFit intr_fit;
  intr_fit.intrinsics = init;
  std::vector<bool> mask(corr.size(), true);

  if (opts.refine_intrinsics) {
    // Coarse consensus under the initial lens model drops gross labeling errors
    // before they can bend the intrinsics.
    RansacOptions coarse = opts.ransac;
    coarse.inlier_threshold_m = std::max(5.0, 10.0 * opts.ransac.inlier_threshold_m);
    try {
      mask = fit_homography(undistorted_pairs(corr, intr), coarse).inliers;
    } catch (const Error&) {
      mask.assign(corr.size(), true);
    }
    try {
      intr_fit = estimate_intrinsics(select<Correspondence>(corr, mask), intr, opts.intrinsics);
    } catch (const Error& e) {
      if (e.code() != Errc::InsufficientData) throw;
      intr_fit = estimate_intrinsics(corr, intr, opts.intrinsics);
    }
    intr = intr_fit.intrinsics;
  }

  HomographyFit hfit = fit_homography(undistorted_pairs(corr, intr), opts.ransac);
  Homography h = hfit.homography;
  if (opts.refine_intrinsics) {
    const auto inliers = select<Correspondence>(corr, hfit.inliers);
    try {
      intr_fit = estimate_intrinsics(inliers, intr, opts.intrinsics);
      intr = intr_fit.intrinsics;
      h = intr_fit.homography;
    } catch (const Error& e) {
      // The consensus set no longer constrains the lens; keep the earlier estimate.
      if (e.code() != Errc::InsufficientData) throw;
    }
  }
  const auto inlier_landmarks = select<LandmarkPair>(landmarks, hfit.inliers);
  return {CameraCalibration::create(id, intr, h, scene_origin, inlier_landmarks, opts.gate_m), hfit.inliers,
          intr_fit};
}

std::map<CameraId, std::vector<LandmarkPair>> read_landmarks_csv(std::istream& in) {
  std::map<CameraId, std::vector<LandmarkPair>> out;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line != "camera_id,u_px,v_px,lat_deg,lon_deg")
        throw Error(Errc::ParseError, "line 1: unexpected landmark CSV header");
      continue;
    }
    std::stringstream ss(line);
    std::string cam;
    std::string field;
    double vals[4];
    std::getline(ss, cam, ',');
    for (double& v : vals) {
      if (!std::getline(ss, field, ','))
        throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected 5 fields");
      try {
        std::size_t used = 0;
        v = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": bad number '" + field + "'");
      }
    }
    CameraId id;
    try {
      id = camera_from_string(cam);
    } catch (const Error&) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": unknown camera '" + cam + "'");
    }
    const LandmarkPair pair{{vals[0], vals[1]}, {vals[2], vals[3]}};
    if (!pair.world.valid()) throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": lat/lon out of range");
    out[id].push_back(pair);
  }
  return out;
}

void write_landmarks_csv(std::ostream& out, const std::map<CameraId, std::vector<LandmarkPair>>& sets) {
  out << "camera_id,u_px,v_px,lat_deg,lon_deg\n";
  out.precision(12);
  for (const auto& [id, pairs] : sets)
    for (const auto& p : pairs)
      out << to_string(id) << ',' << p.pixel.u << ',' << p.pixel.v << ',' << p.world.lat << ',' << p.world.lon
          << '\n';
}

std::string calibration_to_json(const CameraCalibration& c) {
  const auto& k = c.intrinsics();
  const auto& h = c.homography().matrix();
  nlohmann::json j;
  j["version"] = 1;
  j["camera_id"] = std::string(to_string(c.camera_id()));
  j["intrinsics"] = {{"cx", k.principal_point.u}, {"cy", k.principal_point.v}, {"f", k.focal},
                     {"k1", k.k1},                {"k2", k.k2},                {"k3", k.k3},
                     {"theta_max", k.theta_max}};
  j["homography"] = {h(0, 0), h(0, 1), h(0, 2), h(1, 0), h(1, 1), h(1, 2), h(2, 0), h(2, 1), h(2, 2)};
  j["scene_origin"] = {{"lat", c.scene_origin().lat}, {"lon", c.scene_origin().lon}};
  j["mean_error_m"] = c.mean_error_m();
  return j.dump(2);
}

CameraCalibration calibration_from_json(std::string_view text, double gate_m) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
  try {
    if (j.at("version").get<int>() != 1) throw Error(Errc::ParseError, "unsupported calibration version");
    const auto& ji = j.at("intrinsics");
    FisheyeIntrinsics k;
    k.principal_point = {ji.at("cx").get<double>(), ji.at("cy").get<double>()};
    k.focal = ji.at("f").get<double>();
    k.k1 = ji.at("k1").get<double>();
    k.k2 = ji.at("k2").get<double>();
    k.k3 = ji.at("k3").get<double>();
    k.theta_max = ji.value("theta_max", kDefaultThetaMax);
    const auto& jh = j.at("homography");
    if (!jh.is_array() || jh.size() != 9) throw Error(Errc::ParseError, "homography must hold 9 numbers");
    Eigen::Matrix3d h;
    for (int i = 0; i < 9; ++i) h(i / 3, i % 3) = jh.at(i).get<double>();
    const WorldPoint origin{j.at("scene_origin").at("lat").get<double>(), j.at("scene_origin").at("lon").get<double>()};
    return CameraCalibration::restore(camera_from_string(j.at("camera_id").get<std::string>()), k, Homography(h),
                                      origin, j.at("mean_error_m").get<double>(), gate_m);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
}

}  // namespace msight
