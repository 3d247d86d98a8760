#pragma once

#include "msight/calibration.hpp"
#include "msight/geo.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace msight {

enum class ObjectClass : std::uint8_t { Car = 0, TruckBusTrailer = 1, VulnerableRoadUser = 2 };

/// "car", "truck_bus_trailer", "vru".
std::string_view to_string(ObjectClass c);
ObjectClass class_from_string(std::string_view s);

/// Minimum bounding rectangle of the object's bottom surface; its center is
/// the object's ground contact point.
struct BottomBox {
  PixelPoint center;
  double width = 0.0;
  double height = 0.0;

  friend bool operator==(const BottomBox&, const BottomBox&) = default;
};

struct DetectionRecord {
  CameraId camera = CameraId::NE;
  std::int64_t frame_ts_ms = 0;
  ObjectClass cls = ObjectClass::Car;
  BottomBox box;
  double confidence = 1.0;

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

struct DetectionFrame {
  CameraId camera = CameraId::NE;
  std::int64_t frame_ts_ms = 0;
  std::vector<DetectionRecord> detections;

  friend bool operator==(const DetectionFrame&, const DetectionFrame&) = default;
};

inline constexpr std::int64_t kFrameIntervalMs = 400;

/// One NDJSON line. Throws ParseError naming the line and the offending field.
DetectionRecord parse_detection(std::string_view line, int line_no = 0);
std::string to_ndjson(const DetectionRecord& d);

/// Groups records by (camera, timestamp). Output is ordered by timestamp, then camera.
/// Throws ParseError or NonMonotoneTimestamp (a camera's timestamps went backwards).
std::vector<DetectionFrame> read_detection_log(std::istream& in);
void write_detection_log(std::ostream& out, std::span<const DetectionFrame> frames);

/// Simulator ground truth for one object at one instant.
struct TruthObject {
  std::uint32_t id = 0;
  ObjectClass cls = ObjectClass::Car;
  PlanePoint center;  // bottom center, scene plane meters
  double heading_rad = 0.0;  // counterclockwise from east
  double length_m = 4.5;
  double width_m = 1.8;
  double speed_mps = 0.0;
};

struct TruthFrame {
  int frame_index = 0;
  std::int64_t ts_ms = 0;
  std::vector<TruthObject> objects;
};

/// Object `object_id` is hidden in frames [first_frame, last_frame].
struct OcclusionEvent {
  std::uint32_t object_id = 0;
  int first_frame = 0;
  int last_frame = 0;
};

struct DetectionNoise {
  double pos_sigma_px = 0.0;
  double drop_prob = 0.0;
  double fp_rate_per_frame = 0.0;
  std::vector<OcclusionEvent> occlusions;
};

struct SynthStats {
  int skipped = 0;  // truth objects that do not project into the camera
  int dropped = 0;
  int occluded = 0;
  int false_positives = 0;
};

/// Footprint corners of an object on the plane (counterclockwise).
std::vector<PlanePoint> footprint(const TruthObject& o);

/// Stand-in detector: projects each truth footprint through the inverse
/// calibration, perturbs, drops, hides and hallucinates per `noise`.
/// Deterministic in (seed, camera, frame index).
DetectionFrame synth_detect(const TruthFrame& truth, const CameraCalibration& cam, const DetectionNoise& noise,
                            std::uint64_t seed, SynthStats* stats = nullptr, double roi_radius_m = 50.0);

/// Stable 64-bit mix of several integers, used to derive per-stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace msight
