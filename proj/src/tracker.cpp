#include "msight/tracker.hpp"

#include "msight/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace msight {

namespace {

constexpr double kMinPositive = 1e-6;
constexpr double kFrameSeconds = kFrameIntervalMs / 1000.0;

void require_spd(const Matrix8d& p, const char* where) {
  if (!p.allFinite() || p.llt().info() != Eigen::Success)
    throw Error(Errc::CovarianceNotSPD, std::string("covariance lost positive definiteness in ") + where);
}

Vector4d measurement(const PlaneBox& z) { return {z.center.east, z.center.north, z.s, z.r}; }

void clamp_shape(Vector8d& x) {
  x(2) = std::max(x(2), kMinPositive);
  x(3) = std::max(x(3), kMinPositive);
}

}  // namespace

double PlaneBox::width() const { return std::sqrt(s * r); }
double PlaneBox::height() const { return std::sqrt(s / r); }

double iou(const PlaneBox& a, const PlaneBox& b) {
  const double aw = a.width();
  const double ah = a.height();
  const double bw = b.width();
  const double bh = b.height();
  const double ix = std::min(a.center.east + 0.5 * aw, b.center.east + 0.5 * bw) -
                    std::max(a.center.east - 0.5 * aw, b.center.east - 0.5 * bw);
  const double iy = std::min(a.center.north + 0.5 * ah, b.center.north + 0.5 * bh) -
                    std::max(a.center.north - 0.5 * ah, b.center.north - 0.5 * bh);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (aw * ah + bw * bh - inter);
}

PlaneBox TrackState::box() const { return {{x(0), x(1)}, x(2), x(3)}; }

TrackState kf_init(std::uint64_t id, const PlaneBox& z, const KalmanParams& params) {
  TrackState t;
  t.id = id;
  t.x.head<4>() = measurement(z);
  clamp_shape(t.x);
  t.p.setZero();
  t.p.diagonal().head<4>() = params.r_diag;
  t.p.diagonal().tail<4>() = params.initial_velocity_scale * params.r_diag;
  t.hits = 1;
  t.hit_streak = 1;
  t.history.push_back(z.center);
  return t;
}

TrackState kf_predict(const TrackState& t, const KalmanParams& params, double dt_frames) {
  require_spd(t.p, "predict");
  Matrix8d f = Matrix8d::Identity();
  for (int i = 0; i < 4; ++i) f(i, i + 4) = dt_frames;
  TrackState out = t;
  out.x = f * t.x;
  clamp_shape(out.x);
  out.p = f * t.p * f.transpose();
  out.p.diagonal() += params.q_diag;
  out.p = 0.5 * (out.p + out.p.transpose());
  require_spd(out.p, "predict");
  return out;
}

TrackState kf_update(const TrackState& t, const PlaneBox& z, const KalmanParams& params) {
  require_spd(t.p, "update");
  Eigen::Matrix<double, 4, 8> h = Eigen::Matrix<double, 4, 8>::Zero();
  h.leftCols<4>().setIdentity();
  const Eigen::Matrix4d r = params.r_diag.asDiagonal();
  const Eigen::Matrix4d s = h * t.p * h.transpose() + r;
  const Eigen::Matrix<double, 8, 4> k = t.p * h.transpose() * s.inverse();
  TrackState out = t;
  out.x = t.x + k * (measurement(z) - h * t.x);
  clamp_shape(out.x);
  const Matrix8d ikh = Matrix8d::Identity() - k * h;
  out.p = ikh * t.p * ikh.transpose() + k * r * k.transpose();
  out.p = 0.5 * (out.p + out.p.transpose());
  require_spd(out.p, "update");
  out.misses = 0;
  out.hits = t.hits + 1;
  out.hit_streak = t.hit_streak + 1;
  return out;
}

Tracker::Tracker(TrackerConfig cfg, RoiMap roi) : cfg_(std::move(cfg)), roi_(roi) {}

StepResult Tracker::step(std::int64_t ts_ms, std::span<const WorldDetection> detections,
                         const std::map<std::uint64_t, PlanePoint>* predicted) {
  for (auto& t : tracks_) t = kf_predict(t, cfg_.kalman);

  Eigen::MatrixXd cost(static_cast<Eigen::Index>(tracks_.size()), static_cast<Eigen::Index>(detections.size()));
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    PlaneBox box = tracks_[i].box();
    if (predicted) {
      const auto it = predicted->find(tracks_[i].id);
      if (it != predicted->end()) box.center = it->second;
    }
    for (std::size_t j = 0; j < detections.size(); ++j) {
      const auto& d = detections[j];
      const double o = iou(box, {d.plane, d.s, d.r});
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = o < cfg_.iou_min ? kForbiddenCost : 1.0 - o;
    }
  }

  StepResult res;
  res.assignment = hungarian(cost);
  std::vector<char> matched(tracks_.size(), 0);
  for (const auto& [ti, di] : res.assignment.matches) {
    const auto& d = detections[static_cast<std::size_t>(di)];
    auto& t = tracks_[static_cast<std::size_t>(ti)];
    t = kf_update(t, {d.plane, d.s, d.r}, cfg_.kalman);
    t.cls = d.cls;
    if (t.hits >= cfg_.min_hits) t.confirmed = true;
    matched[static_cast<std::size_t>(ti)] = 1;
  }

  std::vector<TrackState> kept;
  kept.reserve(tracks_.size() + detections.size());
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    auto& t = tracks_[i];
    if (!matched[i]) {
      ++t.misses;
      t.hit_streak = 0;
      if (t.misses >= cfg_.max_misses || !t.confirmed) {
        res.deleted.push_back(t.id);
        continue;
      }
    }
    t.history.push_back({t.x(0), t.x(1)});
    while (t.history.size() > kHistoryLength) t.history.pop_front();
    kept.push_back(std::move(t));
  }
  for (int di : res.assignment.unmatched_cols) {
    const auto& d = detections[static_cast<std::size_t>(di)];
    TrackState t = kf_init(next_id_++, {d.plane, d.s, d.r}, cfg_.kalman);
    t.cls = d.cls;
    t.confirmed = t.hits >= cfg_.min_hits;
    kept.push_back(std::move(t));
  }
  tracks_ = std::move(kept);

  const LocalFrame frame = roi_.frame();
  for (const auto& t : tracks_) {
    if (!t.confirmed || t.misses > 0) continue;
    TrackOutput o;
    o.ts_ms = ts_ms;
    o.id = t.id;
    o.cls = t.cls;
    o.plane = {t.x(0), t.x(1)};
    o.position = frame.to_world(o.plane);
    o.v_e = t.x(4) / kFrameSeconds;
    o.v_n = t.x(5) / kFrameSeconds;
    o.s = t.x(2);
    o.r = t.x(3);
    res.confirmed.push_back(o);
  }
  return res;
}

std::string to_ndjson(const TrackOutput& t) {
  nlohmann::ordered_json j;
  j["ts"] = t.ts_ms;
  j["id"] = t.id;
  j["cls"] = std::string(to_string(t.cls));
  j["lat"] = t.position.lat;
  j["lon"] = t.position.lon;
  j["v_e"] = t.v_e;
  j["v_n"] = t.v_n;
  j["s"] = t.s;
  j["r"] = t.r;
  return j.dump();
}

}  // namespace msight
