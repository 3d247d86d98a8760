#pragma once

#include "msight/latency.hpp"
#include "msight/scenario.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace msight {

/// Rates in percent. Each throws EmptyDenominator when its denominator is 0.
double fp_rate_pct(std::size_t fp, std::size_t dets);
double fn_rate_pct(std::size_t fn, std::size_t gt_dets);
double mota(std::size_t fn, std::size_t fp, std::size_t id_switches, std::size_t gt_dets);

/// ids[i] is the track id matched to the object at its i-th expected
/// timestamp, nullopt when that timestamp was a false negative.
/// Counts changes of id between consecutive matched timestamps.
int count_id_switches(std::span<const std::optional<std::uint64_t>> ids);
/// Longest stretch carried by a single id, first to last matched timestamp
/// inclusive, divided by the number of expected timestamps (percent).
/// Throws EmptyDenominator for an empty sequence.
double longest_track_pct(std::span<const std::optional<std::uint64_t>> ids);

/// Error of `estimate` against `truth` split along the truth heading.
struct SplitError {
  double lateral = 0.0;       // left of heading positive
  double longitudinal = 0.0;  // ahead positive
};
SplitError split_error(const PlanePoint& estimate, const PlanePoint& truth, const Eigen::Vector2d& truth_velocity);

/// Truth velocity at ts from the 50 Hz samples by finite differences.
Eigen::Vector2d truth_velocity(const GroundTruthTrack& t, std::int64_t ts_ms);

/// A perception output at one timestamp: tracked position and optionally the
/// predicted position K frames ahead.
struct EvalOutput {
  std::int64_t ts_ms = 0;
  std::uint64_t id = 0;
  PlanePoint position;
  std::optional<PlanePoint> predicted_final;
};

struct EvalOptions {
  double lateral_gate_m = 1.5;
  /// Outputs farther than this from every object are not attributed to any trip.
  double association_radius_m = 5.0;
  int pred_k = 3;
  std::int64_t frame_interval_ms = kFrameIntervalMs;
  /// Outputs within this many ms of an expected timestamp belong to it.
  std::int64_t ts_tolerance_ms = 50;
};

/// Per-object (per-trip) counts and the derived Table III / IV columns.
struct TripMetrics {
  std::uint32_t truth_id = 0;
  int trip = -1;
  std::size_t gt_dets = 0;
  std::size_t dets = 0;  // outputs attributed to this object: tp + fp
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  int id_switch = 0;
  double lat_abs_sum = 0.0;
  double lon_abs_sum = 0.0;
  std::size_t predictions = 0;
  std::size_t pred_fp = 0;
  double fde_lat_sum = 0.0;
  double fde_lon_sum = 0.0;
  /// gtDets-weighted in aggregates.
  std::optional<double> longest_track;

  std::optional<double> fn_rate() const;
  std::optional<double> fp_rate() const;
  std::optional<double> lat_err() const;
  std::optional<double> lon_err() const;
  std::optional<double> mota_score() const;
  std::optional<double> fde_lat() const;
  std::optional<double> fde_lon() const;
  std::optional<double> pred_fp_rate() const;
};

/// Pools counts; rates of the result equal the denominator-weighted means of
/// the parts (gtDets for FN rate and MOTA, Dets for FP rate).
TripMetrics aggregate(std::span<const TripMetrics> rows, std::size_t extra_fp = 0);

/// Label of one expected timestamp of one object.
struct FrameLabel {
  std::uint32_t truth_id = 0;
  std::int64_t ts_ms = 0;
  std::optional<std::uint64_t> output_id;  // set for TP
  bool tp = false;
  double lateral = 0.0;
  double longitudinal = 0.0;
};

struct EvalReport {
  std::vector<TripMetrics> rows;  // one per ground-truth object, by id
  TripMetrics trips;              // pooled over templated trips
  TripMetrics overall;            // pooled over every object plus unattributed FP
  std::size_t unattributed_fp = 0;
  std::vector<FrameLabel> labels;
  std::optional<PercentileSummary> latency_ms;
};

/// Scores outputs against truth. At each expected timestamp the objects and
/// outputs are matched one-to-one by distance (within the association
/// radius); a match within the lateral gate is a TP, otherwise the object gets
/// an FN and the output an FP. Leftover outputs are FP for the nearest object
/// within the association radius, or unattributed.
EvalReport evaluate(std::span<const GroundTruthTrack> truth, std::span<const EvalOutput> outputs,
                    const EvalOptions& opt = {});

/// Column names match the published result tables ("FN rate", "MOTA", ...).
std::string report_to_json(const EvalReport& r);

/// Truth written by truth_to_ndjson. Throws ParseError.
std::vector<GroundTruthTrack> read_truth_ndjson(std::istream& in, const LocalFrame& frame);
/// Track lines as written by the tracker, with an optional "pred" array of
/// [lat, lon] pairs whose last entry is the K-th prediction. Throws ParseError.
std::vector<EvalOutput> read_outputs_ndjson(std::istream& in, const LocalFrame& frame);

}  // namespace msight
