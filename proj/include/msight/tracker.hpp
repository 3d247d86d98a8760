#pragma once

#include "msight/assignment.hpp"
#include "msight/detect.hpp"
#include "msight/locfuse.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace msight {

using Vector8d = Eigen::Matrix<double, 8, 1>;
using Matrix8d = Eigen::Matrix<double, 8, 8>;
using Vector4d = Eigen::Vector4d;

/// Axis-aligned box on the ground plane; width runs east, height north.
struct PlaneBox {
  PlanePoint center;
  double s = 1.0;
  double r = 1.0;

  double width() const;
  double height() const;
};

double iou(const PlaneBox& a, const PlaneBox& b);

/// Noise model in per-frame units (one frame = 0.4 s).
struct KalmanParams {
  Vector8d q_diag = (Vector8d() << 0.01, 0.01, 0.04, 1e-4, 0.25, 0.25, 0.01, 1e-6).finished();
  Vector4d r_diag = Vector4d(0.25, 0.25, 0.09, 1e-4);
  double initial_velocity_scale = 10.0;
};

inline constexpr std::size_t kHistoryLength = 6;

/// State x = [x_c, y_c, s, r, v_x, v_y, v_s, v_r], velocities per frame.
struct TrackState {
  std::uint64_t id = 0;
  Vector8d x = Vector8d::Zero();
  Matrix8d p = Matrix8d::Identity();
  int misses = 0;
  int hits = 0;
  int hit_streak = 0;
  bool confirmed = false;
  ObjectClass cls = ObjectClass::Car;
  std::deque<PlanePoint> history;  // last kHistoryLength positions, oldest first

  PlaneBox box() const;
};

TrackState kf_init(std::uint64_t id, const PlaneBox& z, const KalmanParams& params = {});
/// Constant-velocity propagation over dt_frames frames. Throws CovarianceNotSPD.
TrackState kf_predict(const TrackState& t, const KalmanParams& params = {}, double dt_frames = 1.0);
/// Joseph-form measurement update with z = [x_c, y_c, s, r]. Throws CovarianceNotSPD.
TrackState kf_update(const TrackState& t, const PlaneBox& z, const KalmanParams& params = {});

struct TrackerConfig {
  KalmanParams kalman{};
  double iou_min = 0.1;
  int max_misses = 3;
  /// Hits needed before a track is reported.
  int min_hits = 2;
};

struct TrackOutput {
  std::int64_t ts_ms = 0;
  std::uint64_t id = 0;
  ObjectClass cls = ObjectClass::Car;
  PlanePoint plane;
  WorldPoint position;
  double v_e = 0.0;  // m/s
  double v_n = 0.0;  // m/s
  double s = 0.0;
  double r = 1.0;
};

struct StepResult {
  std::vector<TrackOutput> confirmed;
  Assignment assignment;
  std::vector<std::uint64_t> deleted;
};

/// SORT-style multi-object tracker over fused ground-plane detections.
/// Single writer; ids increase strictly and are never reused.
class Tracker {
 public:
  explicit Tracker(TrackerConfig cfg = {}, RoiMap roi = {});

  /// predicted: optional next-frame centers per track id that replace the
  /// Kalman center for association (s and r still come from the filter).
  StepResult step(std::int64_t ts_ms, std::span<const WorldDetection> detections,
                  const std::map<std::uint64_t, PlanePoint>* predicted = nullptr);

  const std::vector<TrackState>& tracks() const { return tracks_; }
  std::uint64_t next_id() const { return next_id_; }
  const TrackerConfig& config() const { return cfg_; }

 private:
  TrackerConfig cfg_;
  RoiMap roi_;
  std::vector<TrackState> tracks_;
  std::uint64_t next_id_ = 1;
};

std::string to_ndjson(const TrackOutput& t);

}  // namespace msight
