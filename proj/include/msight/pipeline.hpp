#pragma once

#include "msight/locfuse.hpp"
#include "msight/metrics.hpp"
#include "msight/predictor.hpp"
#include "msight/scenario.hpp"
#include "msight/synth_camera.hpp"
#include "msight/tracker.hpp"

#include <iterator>
#include <map>
#include <string>
#include <vector>

namespace msight {

struct PipelineOptions {
  std::vector<CameraId> cameras{std::begin(kAllCameras), std::end(kAllCameras)};
  /// Null: constant-velocity extrapolation of the Kalman state.
  const ModelParameters* model = nullptr;
  /// Associate with the predicted next-frame centers instead of the Kalman ones.
  bool predicted_association = true;
  TrackerConfig tracker = default_tracker();
  WorldPoint origin = kDefaultSceneOrigin;
  EvalOptions eval{};
  /// Keep every encoded V2X message in the result.
  bool keep_messages = false;

  /// Reports a track from its first detection.
  static TrackerConfig default_tracker();
};

struct FrameRecord {
  std::int64_t ts_ms = 0;
  std::vector<WorldDetection> fused;
  std::vector<TrackOutput> tracks;
  /// Parallel to tracks: K predicted plane positions.
  std::vector<std::vector<PlanePoint>> predictions;
  std::size_t message_bytes = 0;
  double compute_ms = 0.0;
};

struct PipelineResult {
  std::vector<FrameRecord> frames;
  std::vector<std::string> messages;
  EvalReport report;
  SynthStats synth;
  int fusion_rejected = 0;
  std::uint64_t bytes_encoded = 0;
};

/// Exact calibrations of the standard four-camera rig.
std::map<CameraId, CameraCalibration> standard_calibrations(WorldPoint origin = kDefaultSceneOrigin);

/// detect -> localize/fuse -> track -> predict -> encode, one 2.5 Hz frame at
/// a time, then evaluation against the scenario truth.
PipelineResult run_pipeline(const Scenario& scenario, const std::map<CameraId, CameraCalibration>& calibs,
                            const PipelineOptions& opt = {});

/// Converts the recorded track outputs for evaluate().
std::vector<EvalOutput> eval_outputs(const PipelineResult& r);

/// Track outputs as NDJSON with a "pred" array of [lat, lon] pairs.
std::string tracks_to_ndjson(const PipelineResult& r, const LocalFrame& frame);
/// Plot-ready CSV: kind,id,ts_ms,east_m,north_m with kind in {truth, track, pred}.
std::string trajectories_csv(const Scenario& s, const PipelineResult& r);

}  // namespace msight
