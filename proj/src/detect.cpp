#include "msight/detect.hpp"

#include "msight/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>

namespace msight {

std::string_view to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::Car: return "car";
    case ObjectClass::TruckBusTrailer: return "truck_bus_trailer";
    case ObjectClass::VulnerableRoadUser: return "vru";
  }
  return "car";
}

ObjectClass class_from_string(std::string_view s) {
  if (s == "car") return ObjectClass::Car;
  if (s == "truck_bus_trailer") return ObjectClass::TruckBusTrailer;
  if (s == "vru") return ObjectClass::VulnerableRoadUser;
  throw Error(Errc::ParseError, "unknown object class '" + std::string(s) + "'");
}

namespace {

[[noreturn]] void field_error(int line_no, std::string_view field, std::string_view reason) {
  throw Error(Errc::ParseError,
              "line " + std::to_string(line_no) + ": field '" + std::string(field) + "' " + std::string(reason));
}

double number_field(const nlohmann::json& j, const char* key, int line_no) {
  const auto it = j.find(key);
  if (it == j.end()) field_error(line_no, key, "is missing");
  if (!it->is_number()) field_error(line_no, key, "is not a number");
  const double v = it->get<double>();
  if (!std::isfinite(v)) field_error(line_no, key, "is not finite");
  return v;
}

}  // namespace

DetectionRecord parse_detection(std::string_view line, int line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": malformed JSON");
  }
  if (!j.is_object()) throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected an object");
  DetectionRecord d;
  const auto cam = j.find("cam");
  if (cam == j.end() || !cam->is_string()) field_error(line_no, "cam", "must be a camera id string");
  try {
    d.camera = camera_from_string(cam->get<std::string>());
  } catch (const Error&) {
    field_error(line_no, "cam", "is not one of NE, NW, SE, SW");
  }
  const auto ts = j.find("ts");
  if (ts == j.end() || !ts->is_number_integer()) field_error(line_no, "ts", "must be integer milliseconds");
  d.frame_ts_ms = ts->get<std::int64_t>();
  const auto cls = j.find("cls");
  if (cls == j.end() || !cls->is_string()) field_error(line_no, "cls", "must be a class string");
  try {
    d.cls = class_from_string(cls->get<std::string>());
  } catch (const Error&) {
    field_error(line_no, "cls", "is not a known class");
  }
  d.box.center.u = number_field(j, "u", line_no);
  d.box.center.v = number_field(j, "v", line_no);
  d.box.width = number_field(j, "w", line_no);
  d.box.height = number_field(j, "h", line_no);
  if (!(d.box.width > 0.0)) field_error(line_no, "w", "must be positive");
  if (!(d.box.height > 0.0)) field_error(line_no, "h", "must be positive");
  d.confidence = number_field(j, "conf", line_no);
  if (d.confidence < 0.0 || d.confidence > 1.0) field_error(line_no, "conf", "out of range [0, 1]");
  return d;
}

std::string to_ndjson(const DetectionRecord& d) {
  nlohmann::ordered_json j;
  j["cam"] = std::string(to_string(d.camera));
  j["ts"] = d.frame_ts_ms;
  j["cls"] = std::string(to_string(d.cls));
  j["u"] = d.box.center.u;
  j["v"] = d.box.center.v;
  j["w"] = d.box.width;
  j["h"] = d.box.height;
  j["conf"] = d.confidence;
  return j.dump();
}

std::vector<DetectionFrame> read_detection_log(std::istream& in) {
  std::map<std::pair<std::int64_t, CameraId>, DetectionFrame> frames;
  std::map<CameraId, std::int64_t> last_ts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const DetectionRecord d = parse_detection(line, line_no);
    const auto prev = last_ts.find(d.camera);
    if (prev != last_ts.end() && d.frame_ts_ms < prev->second)
      throw Error(Errc::NonMonotoneTimestamp, "line " + std::to_string(line_no) + ": camera " +
                                                  std::string(to_string(d.camera)) + " timestamp went backwards");
    last_ts[d.camera] = d.frame_ts_ms;
    auto& f = frames[{d.frame_ts_ms, d.camera}];
    f.camera = d.camera;
    f.frame_ts_ms = d.frame_ts_ms;
    f.detections.push_back(d);
  }
  std::vector<DetectionFrame> out;
  out.reserve(frames.size());
  for (auto& [key, f] : frames) out.push_back(std::move(f));
  return out;
}

void write_detection_log(std::ostream& out, std::span<const DetectionFrame> frames) {
  for (const auto& f : frames)
    for (const auto& d : f.detections) out << to_ndjson(d) << '\n';
}

std::vector<PlanePoint> footprint(const TruthObject& o) {
  const Eigen::Vector2d fwd(std::cos(o.heading_rad), std::sin(o.heading_rad));
  const Eigen::Vector2d left(-fwd.y(), fwd.x());
  const Eigen::Vector2d c = o.center.vec();
  const double hl = 0.5 * o.length_m;
  const double hw = 0.5 * o.width_m;
  return {PlanePoint::from(c + hl * fwd - hw * left), PlanePoint::from(c + hl * fwd + hw * left),
          PlanePoint::from(c - hl * fwd + hw * left), PlanePoint::from(c - hl * fwd - hw * left)};
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

namespace {

// Box around the projected bottom center that covers every projected footprint corner.
bool project_box(const TruthObject& o, const CameraCalibration& cam, BottomBox& box) {
  try {
    const PixelPoint c = cam.plane_to_pixel(o.center);
    double du = 0.0;
    double dv = 0.0;
    for (const auto& p : footprint(o)) {
      const PixelPoint q = cam.plane_to_pixel(p);
      du = std::max(du, std::abs(q.u - c.u));
      dv = std::max(dv, std::abs(q.v - c.v));
    }
    box = {c, std::max(2.0 * du, 1.0), std::max(2.0 * dv, 1.0)};
    return true;
  } catch (const Error&) {
    return false;
  }
}

bool in_image(const PixelPoint& p, const FisheyeIntrinsics& k) {
  return (p.vec() - k.principal_point.vec()).norm() <= k.focal * k.radius(k.theta_max);
}

Eigen::Vector2d quadrant_sign(CameraId id) {
  switch (id) {
    case CameraId::NE: return {1.0, 1.0};
    case CameraId::NW: return {-1.0, 1.0};
    case CameraId::SE: return {1.0, -1.0};
    case CameraId::SW: return {-1.0, -1.0};
  }
  return {1.0, 1.0};
}

}  // namespace

DetectionFrame synth_detect(const TruthFrame& truth, const CameraCalibration& cam, const DetectionNoise& noise,
                            std::uint64_t seed, SynthStats* stats, double roi_radius_m) {
  SynthStats local;
  SynthStats& st = stats ? *stats : local;
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(cam.camera_id()),
                               static_cast<std::uint64_t>(truth.frame_index)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  DetectionFrame out;
  out.camera = cam.camera_id();
  out.frame_ts_ms = truth.ts_ms;
  for (const auto& o : truth.objects) {
    // Every random draw happens regardless of outcome so that one object's
    // fate never shifts another's noise.
    const double nu = gauss(rng);
    const double nv = gauss(rng);
    const double conf = 0.6 + 0.39 * unit(rng);
    const bool drop = unit(rng) < noise.drop_prob;
    BottomBox box;
    if (!project_box(o, cam, box)) {
      ++st.skipped;
      continue;
    }
    const bool occluded = std::any_of(noise.occlusions.begin(), noise.occlusions.end(), [&](const OcclusionEvent& e) {
      return e.object_id == o.id && truth.frame_index >= e.first_frame && truth.frame_index <= e.last_frame;
    });
    if (occluded) {
      ++st.occluded;
      continue;
    }
    if (drop) {
      ++st.dropped;
      continue;
    }
    box.center.u += noise.pos_sigma_px * nu;
    box.center.v += noise.pos_sigma_px * nv;
    if (!in_image(box.center, cam.intrinsics())) {
      ++st.skipped;
      continue;
    }
    out.detections.push_back({cam.camera_id(), truth.ts_ms, o.cls, box, conf});
  }

  if (noise.fp_rate_per_frame > 0.0) {
    std::poisson_distribution<int> count(noise.fp_rate_per_frame);
    const int n = count(rng);
    const Eigen::Vector2d sign = quadrant_sign(cam.camera_id());
    for (int i = 0; i < n; ++i) {
      // Uniform over the camera's quarter disc.
      const double r = roi_radius_m * std::sqrt(unit(rng));
      const double a = 0.5 * std::numbers::pi * unit(rng);
      TruthObject ghost;
      ghost.cls = ObjectClass::Car;
      ghost.center = {sign.x() * r * std::cos(a), sign.y() * r * std::sin(a)};
      ghost.heading_rad = 2.0 * std::numbers::pi * unit(rng);
      const double conf = 0.3 + 0.6 * unit(rng);
      BottomBox box;
      if (!project_box(ghost, cam, box) || !in_image(box.center, cam.intrinsics())) {
        ++st.skipped;
        continue;
      }
      ++st.false_positives;
      out.detections.push_back({cam.camera_id(), truth.ts_ms, ObjectClass::Car, box, conf});
    }
  }
  return out;
}

}  // namespace msight
