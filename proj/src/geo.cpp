#include "msight/geo.hpp"

#include "msight/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace msight {

namespace {

constexpr double kEarthRadiusM = 6378137.0;

double triangle_area(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  return 0.5 * std::abs((b - a).x() * (c - a).y() - (b - a).y() * (c - a).x());
}

double bbox_area(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d lo = pts[0];
  Eigen::Vector2d hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Eigen::Vector2d ext = hi - lo;
  return ext.x() * ext.y();
}

// Isotropic scaling to zero mean and mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - c).norm();
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::numbers::sqrt2 / mean_dist : 1.0;
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = s;
  t(1, 1) = s;
  t(0, 2) = -s * c.x();
  t(1, 2) = -s * c.y();
  return t;
}

Eigen::Vector2d transform(const Eigen::Matrix3d& h, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = h * p.homogeneous();
  return q.hnormalized();
}

// Levenberg-Marquardt on the 8 free entries (h22 = 1) minimizing the transfer
// error in the destination frame. Points are already normalized.
Eigen::Matrix3d refine_homography(const Eigen::Matrix3d& h0, std::span<const Eigen::Vector2d> src,
                                  std::span<const Eigen::Vector2d> dst) {
  using Vec8 = Eigen::Matrix<double, 8, 1>;
  using Mat8 = Eigen::Matrix<double, 8, 8>;
  if (std::abs(h0(2, 2)) < 1e-12) return h0;
  const Eigen::Matrix3d hn = h0 / h0(2, 2);
  Vec8 p;
  p << hn(0, 0), hn(0, 1), hn(0, 2), hn(1, 0), hn(1, 1), hn(1, 2), hn(2, 0), hn(2, 1);

  auto to_matrix = [](const Vec8& v) {
    Eigen::Matrix3d m;
    m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), 1.0;
    return m;
  };
  auto cost_of = [&](const Vec8& v) {
    const Eigen::Matrix3d m = to_matrix(v);
    double c = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const Eigen::Vector3d q = m * src[i].homogeneous();
      if (std::abs(q.z()) < 1e-15) return std::numeric_limits<double>::infinity();
      c += (q.hnormalized() - dst[i]).squaredNorm();
    }
    return c;
  };

  double cost = cost_of(p);
  double lambda = 1e-3;
  for (int iter = 0; iter < 50 && cost > 0.0; ++iter) {
    Mat8 jtj = Mat8::Zero();
    Vec8 jtr = Vec8::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
      const double x = src[i].x();
      const double y = src[i].y();
      const double w = p(6) * x + p(7) * y + 1.0;
      const double xp = (p(0) * x + p(1) * y + p(2)) / w;
      const double yp = (p(3) * x + p(4) * y + p(5)) / w;
      Eigen::Matrix<double, 2, 8> j = Eigen::Matrix<double, 2, 8>::Zero();
      j(0, 0) = x / w;
      j(0, 1) = y / w;
      j(0, 2) = 1.0 / w;
      j(0, 6) = -x * xp / w;
      j(0, 7) = -y * xp / w;
      j(1, 3) = x / w;
      j(1, 4) = y / w;
      j(1, 5) = 1.0 / w;
      j(1, 6) = -x * yp / w;
      j(1, 7) = -y * yp / w;
      const Eigen::Vector2d r(xp - dst[i].x(), yp - dst[i].y());
      jtj += j.transpose() * j;
      jtr += j.transpose() * r;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      Mat8 a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Vec8 step = a.ldlt().solve(-jtr);
      const Vec8 candidate = p + step;
      const double c = cost_of(candidate);
      if (c < cost) {
        const bool tiny = step.norm() < 1e-14 * (1.0 + p.norm());
        p = candidate;
        cost = c;
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = !tiny;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return to_matrix(p);
}

}  // namespace

bool WorldPoint::valid() const {
  return std::isfinite(lat) && std::isfinite(lon) && std::abs(lat) <= 90.0 && std::abs(lon) <= 180.0;
}

LocalFrame::LocalFrame(WorldPoint origin) : origin_(origin) {
  if (!origin.valid()) throw Error(Errc::InvalidArgument, "scene origin outside WGS84 range");
  meters_per_deg_lat_ = kEarthRadiusM * std::numbers::pi / 180.0;
  meters_per_deg_lon_ = meters_per_deg_lat_ * std::cos(origin.lat * std::numbers::pi / 180.0);
}

PlanePoint LocalFrame::to_plane(const WorldPoint& w) const {
  return {(w.lon - origin_.lon) * meters_per_deg_lon_, (w.lat - origin_.lat) * meters_per_deg_lat_};
}

WorldPoint LocalFrame::to_world(const PlanePoint& p) const {
  return {origin_.lat + p.north / meters_per_deg_lat_, origin_.lon + p.east / meters_per_deg_lon_};
}

std::string_view to_string(CameraId id) {
  switch (id) {
    case CameraId::NE: return "NE";
    case CameraId::NW: return "NW";
    case CameraId::SE: return "SE";
    case CameraId::SW: return "SW";
  }
  return "??";
}

CameraId camera_from_string(std::string_view s) {
  if (s == "NE") return CameraId::NE;
  if (s == "NW") return CameraId::NW;
  if (s == "SE") return CameraId::SE;
  if (s == "SW") return CameraId::SW;
  throw Error(Errc::InvalidArgument, "unknown camera id '" + std::string(s) + "'");
}

double FisheyeIntrinsics::radius(double theta) const {
  const double t2 = theta * theta;
  return theta * (k1 + t2 * (k2 + t2 * k3));
}

double FisheyeIntrinsics::radius_derivative(double theta) const {
  const double t2 = theta * theta;
  return k1 + t2 * (3.0 * k2 + 5.0 * k3 * t2);
}

bool FisheyeIntrinsics::is_monotonic(int samples) const {
  double prev = radius(0.0);
  for (int i = 1; i <= samples; ++i) {
    const double theta = theta_max * static_cast<double>(i) / samples;
    const double r = radius(theta);
    if (!(r > prev) || radius_derivative(theta) <= 0.0) return false;
    prev = r;
  }
  return radius_derivative(0.0) > 0.0;
}

void FisheyeIntrinsics::validate() const {
  if (!(focal > 0.0) || !std::isfinite(focal))
    throw Error(Errc::InvalidArgument, "focal length must be positive");
  if (!(theta_max > 0.0) || theta_max >= std::numbers::pi / 2)
    throw Error(Errc::InvalidArgument, "theta_max must lie in (0, pi/2)");
  if (!is_monotonic()) throw Error(Errc::NonInvertibleRadius, "r(theta) is not strictly increasing");
}

FisheyeIntrinsics FisheyeIntrinsics::equidistant(PixelPoint center, double image_radius_px, double theta_max) {
  FisheyeIntrinsics k;
  k.principal_point = center;
  k.theta_max = theta_max;
  k.focal = image_radius_px / theta_max;
  return k;
}

namespace {

// Solves r(theta) = target on [0, theta_max] by bisection, then Newton polish.
// r'(theta) is a quadratic in theta^2; its minimum on the field of view sits at
// an end point or at the vertex.
bool derivative_positive(const FisheyeIntrinsics& k) {
  const double u_max = k.theta_max * k.theta_max;
  auto d = [&](double u) { return k.k1 + 3.0 * k.k2 * u + 5.0 * k.k3 * u * u; };
  double lowest = std::min(d(0.0), d(u_max));
  if (k.k3 != 0.0) {
    const double vertex = -3.0 * k.k2 / (10.0 * k.k3);
    if (vertex > 0.0 && vertex < u_max) lowest = std::min(lowest, d(vertex));
  }
  return lowest > 0.0;
}

double invert_radius(double target, const FisheyeIntrinsics& k) {
  if (!derivative_positive(k)) throw Error(Errc::NonInvertibleRadius, "r(theta) is not increasing over the field of view");
  const double r_max = k.radius(k.theta_max);
  if (target > r_max * (1.0 + 1e-12))
    throw Error(Errc::OutOfFieldOfView, "radius beyond r(theta_max)");
  double lo = 0.0;
  double hi = k.theta_max;
  for (int i = 0; i < 64 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (k.radius(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  double theta = 0.5 * (lo + hi);
  for (int i = 0; i < 3; ++i) {
    const double d = k.radius_derivative(theta);
    const double step = (k.radius(theta) - target) / d;
    theta -= step;
    if (std::abs(step) < 1e-16) break;
  }
  return theta;
}

}  // namespace

Eigen::Vector2d pixel_to_ray(const PixelPoint& p, const FisheyeIntrinsics& k) {
  if (!std::isfinite(p.u) || !std::isfinite(p.v)) throw Error(Errc::InvalidArgument, "non-finite pixel");
  const Eigen::Vector2d d = p.vec() - k.principal_point.vec();
  const double rho = d.norm();
  if (rho == 0.0) return Eigen::Vector2d::Zero();
  const double theta = invert_radius(rho / k.focal, k);
  return d * (std::tan(theta) / rho);
}

PixelPoint ray_to_pixel(const Eigen::Vector2d& ray, const FisheyeIntrinsics& k) {
  const double len = ray.norm();
  if (len == 0.0) return k.principal_point;
  const double theta = std::atan(len);
  if (theta > k.theta_max * (1.0 + 1e-12)) throw Error(Errc::OutOfFieldOfView, "ray beyond theta_max");
  const double rho = k.focal * k.radius(theta);
  return PixelPoint::from(k.principal_point.vec() + ray * (rho / len));
}

PixelPoint undistort_point(const PixelPoint& p, const FisheyeIntrinsics& k) {
  return PixelPoint::from(k.principal_point.vec() + k.focal * pixel_to_ray(p, k));
}

PixelPoint distort_point(const PixelPoint& p, const FisheyeIntrinsics& k) {
  return ray_to_pixel((p.vec() - k.principal_point.vec()) / k.focal, k);
}

Homography::Homography(const Eigen::Matrix3d& h) : h_(h) {
  if (!h.allFinite()) throw Error(Errc::DegenerateConfiguration, "non-finite homography");
  if (h(2, 2) != 0.0) h_ /= h(2, 2);
  if (std::abs(h_.determinant()) <= 1e-12) throw Error(Errc::DegenerateConfiguration, "singular homography");
}

Eigen::Vector2d Homography::apply(const Eigen::Vector2d& p) const { return transform(h_, p); }

Eigen::Vector3d Homography::apply_h(const Eigen::Vector2d& p) const { return h_ * p.homogeneous(); }

Homography Homography::inverse() const { return Homography(h_.inverse()); }

Eigen::Matrix3d homography_dlt(std::span<const Eigen::Vector2d> src, std::span<const Eigen::Vector2d> dst) {
  const std::size_t n = src.size();
  if (n < 4 || dst.size() != n) throw Error(Errc::DegenerateConfiguration, "DLT needs at least 4 pairs");
  const Eigen::Matrix3d ts = normalizing_transform(src);
  const Eigen::Matrix3d td = normalizing_transform(dst);
  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d s = transform(ts, src[i]);
    const Eigen::Vector2d d = transform(td, dst[i]);
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -s.x(), -s.y(), -1.0, 0.0, 0.0, 0.0, d.x() * s.x(), d.x() * s.y(), d.x();
    a.row(r + 1) << 0.0, 0.0, 0.0, -s.x(), -s.y(), -1.0, d.y() * s.x(), d.y() * s.y(), d.y();
  }
  Eigen::Matrix<double, 9, 1> h;
  if (n == 4) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    h = svd.matrixV().col(8);
  } else {
    // Smallest eigenvector of A^T A; cheaper than an SVD of the tall matrix.
    const Eigen::Matrix<double, 9, 9> ata = a.transpose() * a;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> eig(ata);
    h = eig.eigenvectors().col(0);
  }
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return td.inverse() * hn * ts;
}

namespace {

Eigen::Matrix3d fit_least_squares(std::span<const Eigen::Vector2d> src, std::span<const Eigen::Vector2d> dst) {
  const Eigen::Matrix3d ts = normalizing_transform(src);
  const Eigen::Matrix3d td = normalizing_transform(dst);
  std::vector<Eigen::Vector2d> sn(src.size());
  std::vector<Eigen::Vector2d> dn(dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    sn[i] = transform(ts, src[i]);
    dn[i] = transform(td, dst[i]);
  }
  const Eigen::Matrix3d h0 = td * homography_dlt(src, dst) * ts.inverse();
  const Eigen::Matrix3d hr = refine_homography(h0, sn, dn);
  return td.inverse() * hr * ts;
}

bool sample_degenerate(const std::array<int, 4>& idx, std::span<const Eigen::Vector2d> pts, double min_area) {
  for (int skip = 0; skip < 4; ++skip) {
    std::array<int, 3> t{};
    int j = 0;
    for (int i = 0; i < 4; ++i)
      if (i != skip) t[j++] = idx[i];
    if (triangle_area(pts[t[0]], pts[t[1]], pts[t[2]]) < min_area) return true;
  }
  return false;
}

}  // namespace

HomographyFit fit_homography(std::span<const Correspondence> pairs, const RansacOptions& opts) {
  const int n = static_cast<int>(pairs.size());
  if (n < 4) throw Error(Errc::DegenerateConfiguration, "need at least 4 correspondences");
  std::vector<Eigen::Vector2d> src(n);
  std::vector<Eigen::Vector2d> dst(n);
  for (int i = 0; i < n; ++i) {
    src[i] = pairs[i].pixel.vec();
    dst[i] = pairs[i].plane.vec();
  }
  const double src_min_area = opts.degeneracy_ratio * bbox_area(src);
  const double dst_min_area = opts.degeneracy_ratio * bbox_area(dst);
  if (!(src_min_area > 0.0) || !(dst_min_area > 0.0))
    throw Error(Errc::DegenerateConfiguration, "points are collinear");

  const double thr2 = opts.inlier_threshold_m * opts.inlier_threshold_m;
  auto inlier_mask = [&](const Eigen::Matrix3d& h, std::vector<bool>& mask) {
    int count = 0;
    mask.assign(n, false);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d q = h * src[i].homogeneous();
      if (std::abs(q.z()) < 1e-300) continue;
      if ((q.hnormalized() - dst[i]).squaredNorm() < thr2) {
        mask[i] = true;
        ++count;
      }
    }
    return count;
  };

  std::mt19937_64 rng(opts.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<bool> mask;
  int best_count = -1;
  Eigen::Matrix3d best_h = Eigen::Matrix3d::Identity();
  long needed = opts.iterations;
  for (long it = 0; it < std::min<long>(needed, opts.iterations); ++it) {
    for (int i = 0; i < 4; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    const std::array<int, 4> idx{order[0], order[1], order[2], order[3]};
    if (sample_degenerate(idx, src, src_min_area) || sample_degenerate(idx, dst, dst_min_area)) continue;
    const std::array<Eigen::Vector2d, 4> s{src[idx[0]], src[idx[1]], src[idx[2]], src[idx[3]]};
    const std::array<Eigen::Vector2d, 4> d{dst[idx[0]], dst[idx[1]], dst[idx[2]], dst[idx[3]]};
    const Eigen::Matrix3d h = homography_dlt(s, d);
    if (!h.allFinite()) continue;
    const int count = inlier_mask(h, mask);
    if (count > best_count) {
      best_count = count;
      best_h = h;
      const double w = static_cast<double>(count) / n;
      const double p_good = std::pow(w, 4);
      if (p_good >= 1.0) {
        needed = it + 1;
      } else if (p_good > 0.0) {
        const double k = std::log(1.0 - opts.confidence) / std::log(1.0 - p_good);
        needed = std::min<long>(opts.iterations, static_cast<long>(std::ceil(k)));
      }
    }
  }
  if (best_count < 0) throw Error(Errc::DegenerateConfiguration, "every minimal sample was degenerate");
  const int min_inliers = std::max(4, opts.min_inliers);
  if (best_count < min_inliers) throw Error(Errc::InsufficientInliers, "consensus set too small");

  std::vector<bool> current;
  int count = inlier_mask(best_h, current);
  Eigen::Matrix3d h = best_h;
  for (int round = 0; round < 10; ++round) {
    std::vector<Eigen::Vector2d> si;
    std::vector<Eigen::Vector2d> di;
    for (int i = 0; i < n; ++i) {
      if (!current[i]) continue;
      si.push_back(src[i]);
      di.push_back(dst[i]);
    }
    if (static_cast<int>(si.size()) < 4) break;
    h = fit_least_squares(si, di);
    std::vector<bool> next;
    const int next_count = inlier_mask(h, next);
    if (next == current) break;
    if (next_count < min_inliers) break;
    current = std::move(next);
    count = next_count;
  }
  if (count < min_inliers) throw Error(Errc::InsufficientInliers, "consensus set too small after refit");

  HomographyFit fit;
  fit.homography = Homography(h);
  fit.inliers = current;
  fit.inlier_count = count;
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    if (current[i]) sum += (fit.homography.apply(src[i]) - dst[i]).squaredNorm();
  fit.rms_m = std::sqrt(sum / std::max(1, count));
  return fit;
}

}  // namespace msight
