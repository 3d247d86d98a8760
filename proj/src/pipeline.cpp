#include "msight/pipeline.hpp"

#include "msight/error.hpp"
#include "msight/v2x.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <sstream>

namespace msight {

TrackerConfig PipelineOptions::default_tracker() {
  TrackerConfig c;
  c.min_hits = 1;
  return c;
}

std::map<CameraId, CameraCalibration> standard_calibrations(WorldPoint origin) {
  std::map<CameraId, CameraCalibration> out;
  for (CameraId id : kAllCameras) out.emplace(id, exact_calibration(SyntheticCamera::standard(id), origin));
  return out;
}

namespace {

TrajectoryHistory history_of(const TrackState& t) {
  TrajectoryHistory h;
  h.id = t.id;
  const std::size_t n = std::min<std::size_t>(t.history.size(), kHistoryFrames);
  const std::size_t pad = kHistoryFrames - n;
  for (std::size_t i = 0; i < kHistoryFrames; ++i) {
    h.valid[i] = i >= pad;
    if (h.valid[i]) h.positions[i] = t.history[t.history.size() - n + (i - pad)];
  }
  return h;
}

std::vector<PlanePoint> kalman_extrapolation(const TrackState& t, int k) {
  std::vector<PlanePoint> out;
  for (int i = 1; i <= k; ++i) out.push_back({t.x(0) + i * t.x(4), t.x(1) + i * t.x(5)});
  return out;
}

}  // namespace

PipelineResult run_pipeline(const Scenario& scenario, const std::map<CameraId, CameraCalibration>& calibs,
                            const PipelineOptions& opt) {
  const int k = opt.model ? opt.model->config.future_frames : opt.eval.pred_k;
  if (k != opt.eval.pred_k) throw Error(Errc::InvalidArgument, "model horizon differs from the evaluation horizon");
  for (CameraId id : opt.cameras)
    if (!calibs.count(id))
      throw Error(Errc::MissingCamera, "no calibration for camera " + std::string(to_string(id)));

  const RoiMap roi{opt.origin, scenario.config.roi_radius_m};
  const LocalFrame frame = roi.frame();
  Tracker tracker(opt.tracker, roi);
  PipelineResult res;
  std::map<std::uint64_t, PlanePoint> next_centers;

  for (std::size_t fi = 0; fi < scenario.frame_ts.size(); ++fi) {
    const auto t0 = std::chrono::steady_clock::now();
    FrameRecord rec;
    rec.ts_ms = scenario.frame_ts[fi];
    const TruthFrame truth = scenario.truth_frame(fi);

    std::vector<DetectionFrame> frames;
    for (CameraId id : opt.cameras)
      frames.push_back(synth_detect(truth, calibs.at(id), scenario.config.noise, scenario.config.seed, &res.synth,
                                    roi.radius_m));
    FusionResult fused;
    try {
      fused = fuse(rec.ts_ms, frames, calibs, roi, opt.cameras);
    } catch (const Error& e) {
      throw Error(e.code(), "fusion at frame " + std::to_string(fi) + ": " + e.what());
    }
    res.fusion_rejected += fused.rejected;

    StepResult step;
    try {
      step = tracker.step(rec.ts_ms, fused.detections, opt.predicted_association ? &next_centers : nullptr);
    } catch (const Error& e) {
      throw Error(e.code(), "tracker at frame " + std::to_string(fi) + ": " + e.what());
    }

    // Predict for every live track; the next-frame center feeds association.
    const auto& live = tracker.tracks();
    std::map<std::uint64_t, std::vector<PlanePoint>> preds;
    std::vector<TrajectoryHistory> histories;
    for (const auto& t : live) histories.push_back(history_of(t));
    std::optional<PredictionOutput> model_out;
    if (opt.model && !histories.empty()) model_out = forward(histories, *opt.model);
    for (std::size_t i = 0; i < live.size(); ++i) {
      preds[live[i].id] = model_out && histories[i].complete() ? model_out->track(static_cast<Eigen::Index>(i))
                                                                 : kalman_extrapolation(live[i], k);
    }
    next_centers.clear();
    for (const auto& [id, p] : preds) next_centers[id] = p.front();

    PerceptionMessage msg;
    msg.seq = static_cast<std::uint32_t>(fi);
    msg.frame_ts_ms = static_cast<std::uint64_t>(rec.ts_ms);
    msg.producer_ts_ms = static_cast<std::uint64_t>(rec.ts_ms);
    msg.pred_k = static_cast<std::uint8_t>(k);
    for (const auto& o : step.confirmed) {
      rec.tracks.push_back(o);
      rec.predictions.push_back(preds.at(o.id));
      VehicleRecord v;
      v.id = static_cast<std::uint32_t>(o.id);
      v.cls = o.cls;
      v.position = o.position;
      v.heading_deg = heading_from_velocity(o.v_e, o.v_n);
      v.speed_mps = std::hypot(o.v_e, o.v_n);
      for (const auto& p : rec.predictions.back()) v.predicted.push_back(frame.to_world(p));
      msg.vehicles.push_back(std::move(v));
    }
    std::string bytes = encode(msg);
    rec.message_bytes = bytes.size();
    res.bytes_encoded += bytes.size();
    if (opt.keep_messages) res.messages.push_back(std::move(bytes));
    rec.fused = std::move(fused.detections);
    rec.compute_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.frames.push_back(std::move(rec));
  }

  res.report = evaluate(scenario.tracks, eval_outputs(res), opt.eval);
  std::vector<double> compute;
  for (const auto& f : res.frames) compute.push_back(f.compute_ms);
  if (!compute.empty()) res.report.latency_ms = summarize(compute);
  return res;
}

std::vector<EvalOutput> eval_outputs(const PipelineResult& r) {
  std::vector<EvalOutput> out;
  for (const auto& f : r.frames)
    for (std::size_t i = 0; i < f.tracks.size(); ++i) {
      EvalOutput o{f.ts_ms, f.tracks[i].id, f.tracks[i].plane, std::nullopt};
      if (!f.predictions[i].empty()) o.predicted_final = f.predictions[i].back();
      out.push_back(o);
    }
  return out;
}

std::string tracks_to_ndjson(const PipelineResult& r, const LocalFrame& frame) {
  std::string out;
  for (const auto& f : r.frames)
    for (std::size_t i = 0; i < f.tracks.size(); ++i) {
      auto j = nlohmann::ordered_json::parse(to_ndjson(f.tracks[i]));
      auto pred = nlohmann::ordered_json::array();
      for (const auto& p : f.predictions[i]) {
        const WorldPoint w = frame.to_world(p);
        pred.push_back({w.lat, w.lon});
      }
      j["pred"] = pred;
      out += j.dump();
      out += '\n';
    }
  return out;
}

std::string trajectories_csv(const Scenario& s, const PipelineResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "kind,id,ts_ms,east_m,north_m\n";
  for (const auto& t : s.tracks)
    for (auto ts : t.expected_timestamps()) {
      const auto p = t.at(ts)->position;
      os << "truth," << t.id << ',' << ts << ',' << p.east << ',' << p.north << '\n';
    }
  for (const auto& f : r.frames)
    for (std::size_t i = 0; i < f.tracks.size(); ++i) {
      const auto& o = f.tracks[i];
      os << "track," << o.id << ',' << f.ts_ms << ',' << o.plane.east << ',' << o.plane.north << '\n';
      for (std::size_t k = 0; k < f.predictions[i].size(); ++k)
        os << "pred," << o.id << ',' << f.ts_ms + static_cast<std::int64_t>(k + 1) * kFrameIntervalMs << ','
           << f.predictions[i][k].east << ',' << f.predictions[i][k].north << '\n';
    }
  return os.str();
}

}  // namespace msight
