#pragma once

#include "msight/detect.hpp"
#include "msight/geo.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace msight {

enum class Lane : std::uint8_t { Inner = 0, Outer = 1 };

/// One templated trip through the roundabout. Legs are numbered 0..3
/// counterclockwise starting with the south approach.
struct TripTemplate {
  Lane lane = Lane::Inner;
  double turn_deg = 270.0;
  int entry_leg = 0;
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  /// 0 ends the scenario when the last templated trip leaves.
  double duration_s = 0.0;
  double inner_radius_m = 15.0;
  double outer_radius_m = 19.0;
  /// Legs start and end on this circle, inside the ROI.
  double boundary_radius_m = 42.0;
  double roi_radius_m = 50.0;
  /// Background arrivals per leg (vehicles/s, Poisson).
  double arrival_rate = 0.02;
  double speed_min_mps = 4.5;
  double speed_max_mps = 6.5;
  /// Pedestrians and cyclists in background traffic.
  double vru_speed_min_mps = 1.0;
  double vru_speed_max_mps = 2.0;
  double max_accel_mps2 = 3.0;
  /// Earliest spacing between consecutive templated trips.
  double trip_spacing_s = 4.0;
  /// Spawns are delayed until the new path keeps this distance to everyone.
  double min_gap_m = 8.0;
  std::vector<TripTemplate> trips = default_trips();
  DetectionNoise noise{};
  std::int64_t start_ts_ms = 1666372800000;

  /// Four 270 degree inner-lane trips and four 90 degree outer-lane trips.
  static std::vector<TripTemplate> default_trips();
  /// Throws InfeasibleConfig.
  void validate() const;
};

inline constexpr std::int64_t kTruthIntervalMs = 20;  // 50 Hz

struct TruthSample {
  std::int64_t ts_ms = 0;
  PlanePoint position;
  double heading_rad = 0.0;  // counterclockwise from east
  double speed_mps = 0.0;
};

struct GroundTruthTrack {
  std::uint32_t id = 0;
  ObjectClass cls = ObjectClass::Car;
  /// Index into ScenarioConfig::trips, or -1 for background traffic.
  int trip = -1;
  TripTemplate route;
  double length_m = 4.5;
  double width_m = 1.8;
  std::vector<TruthSample> samples;  // 50 Hz, contiguous

  std::int64_t first_ts() const { return samples.front().ts_ms; }
  std::int64_t last_ts() const { return samples.back().ts_ms; }
  std::optional<TruthSample> at(std::int64_t ts_ms) const;
  /// 2.5 Hz expected-detection timestamps, anchored at the first sample.
  std::vector<std::int64_t> expected_timestamps() const;
};

struct Scenario {
  ScenarioConfig config;
  std::vector<GroundTruthTrack> tracks;
  /// Global 2.5 Hz frame clock covering every track.
  std::vector<std::int64_t> frame_ts;

  TruthFrame truth_frame(std::size_t frame_index) const;
  const GroundTruthTrack* find(std::uint32_t id) const;
};

/// Deterministic per seed. Throws InfeasibleConfig.
Scenario generate_scenario(const ScenarioConfig& cfg);

/// Position and heading along a route at arc length s (clamped to the route).
struct RoutePose {
  PlanePoint position;
  double heading_rad = 0.0;
};
double route_length(const TripTemplate& t, const ScenarioConfig& cfg);
RoutePose route_pose(const TripTemplate& t, const ScenarioConfig& cfg, double s);

std::string scenario_config_to_json(const ScenarioConfig& cfg);
/// Missing keys keep their defaults. Throws ParseError.
ScenarioConfig scenario_config_from_json(std::string_view text);

/// One line per 50 Hz sample: {"id","ts","lat","lon","heading","speed","cls","trip"}.
std::string truth_to_ndjson(const Scenario& s, const LocalFrame& frame);

}  // namespace msight
