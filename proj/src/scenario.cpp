#include "msight/scenario.hpp"

#include "msight/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace msight {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::int64_t kSpawnQuantumMs = kFrameIntervalMs;
constexpr double kMaxProbeDelayS = 300.0;
constexpr double kMaxBackgroundDelayS = 20.0;

void infeasible(const std::string& why) { throw Error(Errc::InfeasibleConfig, why); }

double lane_radius(Lane lane, const ScenarioConfig& cfg) {
  return lane == Lane::Inner ? cfg.inner_radius_m : cfg.outer_radius_m;
}

struct Dimensions {
  double length;
  double width;
};

Dimensions dimensions(ObjectClass c) {
  switch (c) {
    case ObjectClass::TruckBusTrailer: return {9.0, 2.5};
    case ObjectClass::VulnerableRoadUser: return {1.8, 0.7};
    case ObjectClass::Car: break;
  }
  return {4.5, 1.8};
}

std::vector<TruthSample> drive(const TripTemplate& route, const ScenarioConfig& cfg, std::int64_t spawn_ms,
                               double speed) {
  const double length = route_length(route, cfg);
  const double step = speed * static_cast<double>(kTruthIntervalMs) / 1000.0;
  const auto n = static_cast<std::size_t>(std::floor(length / step)) + 1;
  std::vector<TruthSample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const RoutePose p = route_pose(route, cfg, step * static_cast<double>(k));
    out.push_back({spawn_ms + static_cast<std::int64_t>(k) * kTruthIntervalMs, p.position, p.heading_rad, speed});
  }
  return out;
}

bool conflicts(const std::vector<TruthSample>& cand, const std::vector<GroundTruthTrack>& tracks, double gap) {
  for (const auto& t : tracks) {
    const std::int64_t lo = std::max(cand.front().ts_ms, t.first_ts());
    const std::int64_t hi = std::min(cand.back().ts_ms, t.last_ts());
    for (std::int64_t ts = lo; ts <= hi; ts += kTruthIntervalMs) {
      const auto& a = cand[static_cast<std::size_t>((ts - cand.front().ts_ms) / kTruthIntervalMs)];
      const auto& b = t.samples[static_cast<std::size_t>((ts - t.first_ts()) / kTruthIntervalMs)];
      if ((a.position.vec() - b.position.vec()).norm() < gap) return true;
    }
  }
  return false;
}

/// Earliest conflict-free spawn at or after earliest_ms; nullopt past the delay cap.
std::optional<std::vector<TruthSample>> place(const TripTemplate& route, const ScenarioConfig& cfg,
                                              std::int64_t earliest_ms, double speed,
                                              const std::vector<GroundTruthTrack>& tracks, double max_delay_s) {
  const std::int64_t first = (earliest_ms + kSpawnQuantumMs - 1) / kSpawnQuantumMs * kSpawnQuantumMs;
  const auto limit = first + static_cast<std::int64_t>(max_delay_s * 1000.0);
  for (std::int64_t t = first; t <= limit; t += kSpawnQuantumMs) {
    auto samples = drive(route, cfg, t, speed);
    if (!conflicts(samples, tracks, cfg.min_gap_m)) return samples;
  }
  return std::nullopt;
}

}  // namespace

std::vector<TripTemplate> ScenarioConfig::default_trips() {
  std::vector<TripTemplate> t;
  for (int leg = 0; leg < 4; ++leg) t.push_back({Lane::Inner, 270.0, leg});
  for (int leg = 0; leg < 4; ++leg) t.push_back({Lane::Outer, 90.0, leg});
  return t;
}

void ScenarioConfig::validate() const {
  if (!(inner_radius_m > 0.0) || !(outer_radius_m > inner_radius_m))
    infeasible("lane radii must satisfy 0 < inner < outer");
  if (!(boundary_radius_m > outer_radius_m) || !(roi_radius_m > boundary_radius_m))
    infeasible("need outer lane < leg boundary < ROI radius");
  const double max_half_diag = 0.5 * std::hypot(9.0, 2.5);
  if (boundary_radius_m + max_half_diag > roi_radius_m) infeasible("vehicles at the leg ends would leave the ROI");
  if (!(speed_min_mps > 0.0) || !(speed_max_mps >= speed_min_mps)) infeasible("speed profile must satisfy 0 < min <= max");
  if (!(vru_speed_min_mps > 0.0) || !(vru_speed_max_mps >= vru_speed_min_mps))
    infeasible("VRU speed profile must satisfy 0 < min <= max");
  if (speed_max_mps * speed_max_mps / inner_radius_m > max_accel_mps2 + 1e-12)
    infeasible("top speed on the inner lane exceeds the lateral acceleration bound");
  if (!(arrival_rate >= 0.0) || !std::isfinite(arrival_rate)) infeasible("arrival rate must be >= 0");
  if (!(duration_s >= 0.0) || !(trip_spacing_s >= 0.0) || !(min_gap_m >= 0.0)) infeasible("negative duration, spacing or gap");
  if (trips.empty() && duration_s == 0.0) infeasible("no trips and no duration");
  for (const auto& t : trips) {
    if (!(t.turn_deg > 0.0 && t.turn_deg <= 360.0)) infeasible("turn must be in (0, 360] degrees");
    if (t.entry_leg < 0 || t.entry_leg > 3) infeasible("entry leg must be 0..3");
  }
  if (noise.drop_prob < 0.0 || noise.drop_prob > 1.0 || noise.pos_sigma_px < 0.0 || noise.fp_rate_per_frame < 0.0)
    infeasible("noise parameters out of range");
}

double route_length(const TripTemplate& t, const ScenarioConfig& cfg) {
  const double r = lane_radius(t.lane, cfg);
  const double leg = std::sqrt(cfg.boundary_radius_m * cfg.boundary_radius_m - r * r);
  return 2.0 * leg + r * t.turn_deg * kDeg;
}

RoutePose route_pose(const TripTemplate& t, const ScenarioConfig& cfg, double s) {
  // Legs are tangent to the lane circle, so the path is C1 with curvature 1/r on the arc.
  const double r = lane_radius(t.lane, cfg);
  const double leg = std::sqrt(cfg.boundary_radius_m * cfg.boundary_radius_m - r * r);
  const double arc = r * t.turn_deg * kDeg;
  s = std::clamp(s, 0.0, 2.0 * leg + arc);
  const double phi_in = t.entry_leg * 90.0 * kDeg;
  auto on_circle = [r](double phi) { return Eigen::Vector2d(r * std::cos(phi), r * std::sin(phi)); };
  auto tangent = [](double phi) { return Eigen::Vector2d(-std::sin(phi), std::cos(phi)); };
  if (s <= leg) {
    return {PlanePoint::from(on_circle(phi_in) - tangent(phi_in) * (leg - s)), phi_in + 0.5 * std::numbers::pi};
  }
  if (s <= leg + arc) {
    const double phi = phi_in + (s - leg) / r;
    return {PlanePoint::from(on_circle(phi)), phi + 0.5 * std::numbers::pi};
  }
  const double phi_out = phi_in + t.turn_deg * kDeg;
  return {PlanePoint::from(on_circle(phi_out) + tangent(phi_out) * (s - leg - arc)), phi_out + 0.5 * std::numbers::pi};
}

std::optional<TruthSample> GroundTruthTrack::at(std::int64_t ts_ms) const {
  if (samples.empty() || ts_ms < first_ts() || ts_ms > last_ts()) return std::nullopt;
  const auto off = ts_ms - first_ts();
  const auto i = static_cast<std::size_t>(off / kTruthIntervalMs);
  if (off % kTruthIntervalMs == 0) return samples[i];
  const auto& a = samples[i];
  const auto& b = samples[i + 1];
  const double w = static_cast<double>(off % kTruthIntervalMs) / kTruthIntervalMs;
  TruthSample out = a;
  out.ts_ms = ts_ms;
  out.position = PlanePoint::from((1.0 - w) * a.position.vec() + w * b.position.vec());
  return out;
}

std::vector<std::int64_t> GroundTruthTrack::expected_timestamps() const {
  std::vector<std::int64_t> out;
  if (samples.empty()) return out;
  for (std::int64_t t = first_ts(); t <= last_ts(); t += kFrameIntervalMs) out.push_back(t);
  return out;
}

TruthFrame Scenario::truth_frame(std::size_t frame_index) const {
  TruthFrame f;
  f.frame_index = static_cast<int>(frame_index);
  f.ts_ms = frame_ts.at(frame_index);
  for (const auto& t : tracks) {
    const auto s = t.at(f.ts_ms);
    if (!s) continue;
    TruthObject o;
    o.id = t.id;
    o.cls = t.cls;
    o.center = s->position;
    o.heading_rad = s->heading_rad;
    o.length_m = t.length_m;
    o.width_m = t.width_m;
    o.speed_mps = s->speed_mps;
    f.objects.push_back(o);
  }
  return f;
}

const GroundTruthTrack* Scenario::find(std::uint32_t id) const {
  for (const auto& t : tracks)
    if (t.id == id) return &t;
  return nullptr;
}

Scenario generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  Scenario sc;
  sc.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> speed(cfg.speed_min_mps, cfg.speed_max_mps);
  std::uniform_real_distribution<double> vru_speed(cfg.vru_speed_min_mps, cfg.vru_speed_max_mps);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uint32_t next_id = 1;

  // Work in milliseconds relative to start; shift to epoch at the end.
  std::int64_t earliest = 0;
  for (std::size_t i = 0; i < cfg.trips.size(); ++i) {
    const auto& route = cfg.trips[i];
    auto samples = place(route, cfg, earliest, speed(rng), sc.tracks, kMaxProbeDelayS);
    if (!samples) infeasible("templated trip " + std::to_string(i) + " never finds a conflict-free slot");
    GroundTruthTrack t;
    t.id = next_id++;
    t.trip = static_cast<int>(i);
    t.route = route;
    t.samples = std::move(*samples);
    sc.tracks.push_back(std::move(t));
    earliest = sc.tracks.back().first_ts() + static_cast<std::int64_t>(cfg.trip_spacing_s * 1000.0);
  }

  std::int64_t end_ms = static_cast<std::int64_t>(cfg.duration_s * 1000.0);
  if (end_ms == 0)
    for (const auto& t : sc.tracks) end_ms = std::max(end_ms, t.last_ts());

  if (cfg.arrival_rate > 0.0) {
    std::exponential_distribution<double> gap(cfg.arrival_rate);
    struct Arrival {
      double t;
      int leg;
    };
    std::vector<Arrival> arrivals;
    for (int leg = 0; leg < 4; ++leg)
      for (double t = gap(rng); t * 1000.0 < static_cast<double>(end_ms); t += gap(rng)) arrivals.push_back({t, leg});
    std::sort(arrivals.begin(), arrivals.end(), [](const Arrival& a, const Arrival& b) { return a.t < b.t; });
    for (const auto& a : arrivals) {
      // Draw everything up front so one rejected spawn does not shift later ones.
      TripTemplate route;
      route.entry_leg = a.leg;
      route.lane = unit(rng) < 0.5 ? Lane::Inner : Lane::Outer;
      const bool long_way = unit(rng) < 0.5;
      route.turn_deg = route.lane == Lane::Inner ? (long_way ? 270.0 : 180.0) : (long_way ? 180.0 : 90.0);
      const double u = unit(rng);
      const ObjectClass cls = u < 0.85 ? ObjectClass::Car : u < 0.95 ? ObjectClass::TruckBusTrailer : ObjectClass::VulnerableRoadUser;
      const double v = cls == ObjectClass::VulnerableRoadUser ? vru_speed(rng) : speed(rng);
      auto samples = place(route, cfg, static_cast<std::int64_t>(a.t * 1000.0), v, sc.tracks, kMaxBackgroundDelayS);
      if (!samples || samples->front().ts_ms >= end_ms) continue;
      GroundTruthTrack t;
      t.id = next_id++;
      t.cls = cls;
      t.route = route;
      const Dimensions d = dimensions(cls);
      t.length_m = d.length;
      t.width_m = d.width;
      t.samples = std::move(*samples);
      sc.tracks.push_back(std::move(t));
    }
  }

  for (auto& t : sc.tracks) {
    while (!t.samples.empty() && t.samples.back().ts_ms > end_ms) t.samples.pop_back();
    for (auto& s : t.samples) s.ts_ms += cfg.start_ts_ms;
  }
  std::erase_if(sc.tracks, [](const GroundTruthTrack& t) { return t.samples.empty(); });
  for (std::int64_t t = 0; t <= end_ms; t += kFrameIntervalMs) sc.frame_ts.push_back(cfg.start_ts_ms + t);
  return sc;
}

std::string scenario_config_to_json(const ScenarioConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["duration_s"] = cfg.duration_s;
  j["inner_radius_m"] = cfg.inner_radius_m;
  j["outer_radius_m"] = cfg.outer_radius_m;
  j["boundary_radius_m"] = cfg.boundary_radius_m;
  j["roi_radius_m"] = cfg.roi_radius_m;
  j["arrival_rate"] = cfg.arrival_rate;
  j["speed_min_mps"] = cfg.speed_min_mps;
  j["speed_max_mps"] = cfg.speed_max_mps;
  j["vru_speed_min_mps"] = cfg.vru_speed_min_mps;
  j["vru_speed_max_mps"] = cfg.vru_speed_max_mps;
  j["max_accel_mps2"] = cfg.max_accel_mps2;
  j["trip_spacing_s"] = cfg.trip_spacing_s;
  j["min_gap_m"] = cfg.min_gap_m;
  j["start_ts_ms"] = cfg.start_ts_ms;
  auto trips = nlohmann::ordered_json::array();
  for (const auto& t : cfg.trips)
    trips.push_back({{"lane", t.lane == Lane::Inner ? "inner" : "outer"}, {"turn_deg", t.turn_deg}, {"entry_leg", t.entry_leg}});
  j["trips"] = trips;
  nlohmann::ordered_json noise;
  noise["pos_sigma_px"] = cfg.noise.pos_sigma_px;
  noise["drop_prob"] = cfg.noise.drop_prob;
  noise["fp_rate_per_frame"] = cfg.noise.fp_rate_per_frame;
  auto occ = nlohmann::ordered_json::array();
  for (const auto& o : cfg.noise.occlusions)
    occ.push_back({{"object_id", o.object_id}, {"first_frame", o.first_frame}, {"last_frame", o.last_frame}});
  noise["occlusions"] = occ;
  j["noise"] = noise;
  return j.dump(2);
}

ScenarioConfig scenario_config_from_json(std::string_view text) {
  ScenarioConfig cfg;
  try {
    const auto j = nlohmann::json::parse(text);
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", cfg.seed);
    get("duration_s", cfg.duration_s);
    get("inner_radius_m", cfg.inner_radius_m);
    get("outer_radius_m", cfg.outer_radius_m);
    get("boundary_radius_m", cfg.boundary_radius_m);
    get("roi_radius_m", cfg.roi_radius_m);
    get("arrival_rate", cfg.arrival_rate);
    get("speed_min_mps", cfg.speed_min_mps);
    get("speed_max_mps", cfg.speed_max_mps);
    get("vru_speed_min_mps", cfg.vru_speed_min_mps);
    get("vru_speed_max_mps", cfg.vru_speed_max_mps);
    get("max_accel_mps2", cfg.max_accel_mps2);
    get("trip_spacing_s", cfg.trip_spacing_s);
    get("min_gap_m", cfg.min_gap_m);
    get("start_ts_ms", cfg.start_ts_ms);
    if (j.contains("trips")) {
      cfg.trips.clear();
      for (const auto& t : j.at("trips")) {
        TripTemplate tt;
        const auto lane = t.value("lane", std::string("inner"));
        if (lane != "inner" && lane != "outer") throw Error(Errc::ParseError, "trip lane must be inner or outer");
        tt.lane = lane == "inner" ? Lane::Inner : Lane::Outer;
        tt.turn_deg = t.value("turn_deg", 270.0);
        tt.entry_leg = t.value("entry_leg", 0);
        cfg.trips.push_back(tt);
      }
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      cfg.noise.pos_sigma_px = n.value("pos_sigma_px", 0.0);
      cfg.noise.drop_prob = n.value("drop_prob", 0.0);
      cfg.noise.fp_rate_per_frame = n.value("fp_rate_per_frame", 0.0);
      if (n.contains("occlusions"))
        for (const auto& o : n.at("occlusions"))
          cfg.noise.occlusions.push_back({o.at("object_id").get<std::uint32_t>(), o.at("first_frame").get<int>(),
                                          o.at("last_frame").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("scenario config: ") + e.what());
  }
  return cfg;
}

std::string truth_to_ndjson(const Scenario& s, const LocalFrame& frame) {
  std::string out;
  for (const auto& t : s.tracks) {
    for (const auto& p : t.samples) {
      const WorldPoint w = frame.to_world(p.position);
      nlohmann::ordered_json j;
      j["id"] = t.id;
      j["ts"] = p.ts_ms;
      j["lat"] = w.lat;
      j["lon"] = w.lon;
      j["heading"] = p.heading_rad;
      j["speed"] = p.speed_mps;
      j["cls"] = std::string(to_string(t.cls));
      j["trip"] = t.trip;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

}  // namespace msight
