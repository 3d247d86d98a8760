// msight: command-line front end for the perception/V2X/cloud pipeline.

#include "msight/calibration.hpp"
#include "msight/error.hpp"
#include "msight/forwarder.hpp"
#include "msight/gateway.hpp"
#include "msight/latency.hpp"
#include "msight/metrics.hpp"
#include "msight/pipeline.hpp"
#include "msight/predictor.hpp"
#include "msight/pubsub.hpp"
#include "msight/storage.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace msight;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + path);
  out << text;
}

std::vector<CameraId> parse_cameras(const std::string& list) {
  std::vector<CameraId> out;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(camera_from_string(tok));
  if (out.empty()) throw Error(Errc::InvalidArgument, "no cameras given");
  return out;
}

WorldPoint parse_origin(const std::string& s) {
  if (s.empty()) return kDefaultSceneOrigin;
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw Error(Errc::InvalidArgument, "origin must be lat,lon");
  return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
}

ScenarioConfig load_scenario(const std::string& path, std::optional<std::uint64_t> seed) {
  ScenarioConfig c = path.empty() ? ScenarioConfig{} : scenario_config_from_json(read_file(path));
  if (seed) c.seed = *seed;
  return c;
}

// Calibrations from <dir>/<CAM>.json when given, else the exact rig calibrations.
std::map<CameraId, CameraCalibration> load_calibrations(const std::string& dir, WorldPoint origin) {
  if (dir.empty()) return standard_calibrations(origin);
  std::map<CameraId, CameraCalibration> out;
  for (CameraId id : kAllCameras) {
    const fs::path p = fs::path(dir) / (std::string(to_string(id)) + ".json");
    if (fs::exists(p)) out.emplace(id, calibration_from_json(read_file(p)));
  }
  return out;
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

// Delays each datagram before handing it to the wrapped transport.
class DelayedTransport : public Transport {
 public:
  DelayedTransport(Transport& inner, std::chrono::microseconds delay) : inner_(inner), delay_(delay) {}
  void send(std::string_view d) override {
    std::this_thread::sleep_for(delay_);
    inner_.send(d);
  }

 private:
  Transport& inner_;
  std::chrono::microseconds delay_;
};

nlohmann::ordered_json summary_json(const PercentileSummary& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"p50", s.p50}, {"p90", s.p90}, {"p99", s.p99}, {"max", s.max}};
}

// ------------------------------------------------------------------ run

struct RunArgs {
  std::string scenario, cams = "NE,NW,SE,SW", model, out, truth_out, tracks_out, csv, origin;
  std::optional<std::uint64_t> seed;
};

int cmd_run(const RunArgs& a) {
  const WorldPoint origin = parse_origin(a.origin);
  const Scenario s = generate_scenario(load_scenario(a.scenario, a.seed));
  PipelineOptions opt;
  opt.cameras = parse_cameras(a.cams);
  opt.origin = origin;
  ModelParameters model;
  if (!a.model.empty()) {
    model = load_model(a.model);
    opt.model = &model;
  }
  const PipelineResult r = run_pipeline(s, standard_calibrations(origin), opt);
  const LocalFrame frame(origin);
  if (!a.truth_out.empty()) write_text(a.truth_out, truth_to_ndjson(s, frame));
  if (!a.tracks_out.empty()) write_text(a.tracks_out, tracks_to_ndjson(r, frame));
  if (!a.csv.empty()) write_text(a.csv, trajectories_csv(s, r));
  write_text(a.out, report_to_json(r.report));
  if (!a.out.empty() && a.out != "-") {
    const auto& t = r.report.trips;
    std::cerr << "trips: MOTA " << t.mota_score().value_or(0.0) << "  FN rate " << t.fn_rate().value_or(0.0)
              << "%  FP rate " << t.fp_rate().value_or(0.0) << "%  #ID Switch " << t.id_switch << '\n';
  }
  return 0;
}

// ------------------------------------------------------------------ simulate / track / eval

struct SimArgs {
  std::string scenario, truth_out, detections_out, landmarks_out, origin;
  std::optional<std::uint64_t> seed;
  int landmark_count = 40;
  double landmark_sigma_px = 0.5;
};

int cmd_simulate(const SimArgs& a) {
  const WorldPoint origin = parse_origin(a.origin);
  const Scenario s = generate_scenario(load_scenario(a.scenario, a.seed));
  const auto calibs = standard_calibrations(origin);
  if (!a.landmarks_out.empty()) {
    std::map<CameraId, std::vector<LandmarkPair>> sets;
    for (CameraId id : kAllCameras)
      sets[id] = synth_landmarks(SyntheticCamera::standard(id), LocalFrame(origin), a.landmark_count,
                                 a.landmark_sigma_px, mix_seed(s.config.seed, static_cast<std::uint64_t>(id)));
    std::ofstream out(a.landmarks_out);
    if (!out) throw Error(Errc::InvalidArgument, "cannot write " + a.landmarks_out);
    write_landmarks_csv(out, sets);
  }
  if (!a.truth_out.empty()) write_text(a.truth_out, truth_to_ndjson(s, LocalFrame(origin)));
  if (a.detections_out.empty()) return 0;
  std::vector<DetectionFrame> frames;
  for (std::size_t f = 0; f < s.frame_ts.size(); ++f) {
    const TruthFrame truth = s.truth_frame(f);
    for (CameraId id : kAllCameras)
      frames.push_back(synth_detect(truth, calibs.at(id), s.config.noise, s.config.seed, nullptr, s.config.roi_radius_m));
  }
  std::ofstream out(a.detections_out);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + a.detections_out);
  write_detection_log(out, frames);
  std::cerr << s.tracks.size() << " objects, " << s.frame_ts.size() << " frames\n";
  return 0;
}

struct TrackArgs {
  std::string detections, calib_dir, out, cams = "NE,NW,SE,SW", origin;
  double roi_radius = 50.0;
};

int cmd_track(const TrackArgs& a) {
  std::ifstream in(a.detections);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open " + a.detections);
  const auto frames = read_detection_log(in);
  const WorldPoint origin = parse_origin(a.origin);
  const auto calibs = load_calibrations(a.calib_dir, origin);
  const auto cams = parse_cameras(a.cams);
  const RoiMap roi{origin, a.roi_radius};
  TrackerConfig tc = PipelineOptions::default_tracker();
  Tracker tracker(tc, roi);

  std::ostringstream out;
  int rejected = 0;
  std::size_t i = 0;
  while (i < frames.size()) {
    const std::int64_t ts = frames[i].frame_ts_ms;
    std::size_t j = i;
    while (j < frames.size() && frames[j].frame_ts_ms - ts <= kFuseJitterMs) ++j;
    const auto fused = fuse(ts, std::span(frames).subspan(i, j - i), calibs, roi, cams);
    rejected += fused.rejected;
    for (const auto& t : tracker.step(ts, fused.detections).confirmed) out << to_ndjson(t) << '\n';
    i = j;
  }
  write_text(a.out, out.str());
  std::cerr << "next track id " << tracker.next_id() << ", rejected detections " << rejected << '\n';
  return 0;
}

struct EvalArgs {
  std::string truth, tracks, out, origin;
};

int cmd_eval(const EvalArgs& a) {
  const LocalFrame frame(parse_origin(a.origin));
  std::ifstream t(a.truth), k(a.tracks);
  if (!t) throw Error(Errc::InvalidArgument, "cannot open " + a.truth);
  if (!k) throw Error(Errc::InvalidArgument, "cannot open " + a.tracks);
  const auto truth = read_truth_ndjson(t, frame);
  const auto outs = read_outputs_ndjson(k, frame);
  write_text(a.out, report_to_json(evaluate(truth, outs)));
  return 0;
}

// ------------------------------------------------------------------ latency

struct LatencyArgs {
  std::string transport = "loopback";
  double inject_delay_ms = 0.0;
  std::size_t frames = 200;
  int interval_ms = 0;
  bool zero_work = false;
};

int cmd_latency(const LatencyArgs& a) {
  std::vector<PerceptionMessage> source;
  if (!a.zero_work) {
    PipelineOptions opt;
    opt.keep_messages = true;
    ScenarioConfig c;
    c.noise = {2.0, 0.1, 0.3, {}};
    const auto r = run_pipeline(generate_scenario(c), standard_calibrations(), opt);
    for (const auto& m : r.messages) source.push_back(decode(m));
  }
  PipelineHook hook = [&](std::size_t i) {
    if (source.empty()) return PerceptionMessage{static_cast<std::uint32_t>(i), 0, 0, 3, {}};
    PerceptionMessage m = source[i % source.size()];
    m.seq = static_cast<std::uint32_t>(i);
    return m;
  };
  LatencyOptions lo;
  lo.frames = a.frames;
  lo.frame_interval = std::chrono::milliseconds(a.interval_ms);
  const auto delay = std::chrono::microseconds(static_cast<std::int64_t>(a.inject_delay_ms * 1000.0));

  LatencyReport rep;
  if (a.transport == "loopback") {
    auto link = std::make_shared<LoopbackLink>(delay);
    rep = measure_latency(hook, *link, link, lo);
  } else if (a.transport == "udp") {
    auto rx = std::make_shared<UdpReceiver>(0);
    UdpSender tx({"127.0.0.1", rx->port()});
    DelayedTransport delayed(tx, delay);
    rep = measure_latency(hook, delayed, rx, lo);
  } else {
    throw Error(Errc::InvalidArgument, "transport must be loopback or udp");
  }
  nlohmann::ordered_json j;
  j["transport"] = a.transport;
  j["inject_delay_ms"] = a.inject_delay_ms;
  j["frames"] = a.frames;
  j["lost"] = rep.lost;
  j["phase1_ms"] = summary_json(rep.phase1);
  j["phase2_ms"] = summary_json(rep.phase2);
  std::cout << j.dump(2) << '\n';
  return 0;
}

// ------------------------------------------------------------------ calib

struct CalibArgs {
  std::string landmarks, out_dir, origin;
  double gate = kDefaultCalibrationGateM;
  bool no_refine = false;
};

int cmd_calib(const CalibArgs& a) {
  std::ifstream in(a.landmarks);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open " + a.landmarks);
  const auto sets = read_landmarks_csv(in);
  const WorldPoint origin = parse_origin(a.origin);
  CalibrationOptions opt;
  opt.gate_m = a.gate;
  opt.refine_intrinsics = !a.no_refine;
  if (!a.out_dir.empty()) fs::create_directories(a.out_dir);
  int failed = 0;
  for (const auto& [id, pairs] : sets) {
    try {
      const auto r = calibrate(id, pairs, nominal_intrinsics(), origin, opt);
      const auto inliers = std::count(r.inliers.begin(), r.inliers.end(), true);
      std::cout << to_string(id) << "  landmarks " << pairs.size() << "  inliers " << inliers << "  mean error "
                << r.calibration.mean_error_m() << " m\n";
      if (!a.out_dir.empty())
        write_text((fs::path(a.out_dir) / (std::string(to_string(id)) + ".json")).string(),
                   calibration_to_json(r.calibration));
    } catch (const Error& e) {
      ++failed;
      std::cout << to_string(id) << "  " << e.what() << '\n';
    }
  }
  return failed ? 1 : 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string dataset, out, optimizer = "gd";
  int synthetic = 2000, dim = 32, layers = 1, heads = 4, steps = 2000, batch = 16;
  double lr = 1e-3, final_lr_fraction = 1.0, clip = 0.0;
  std::uint64_t seed = 1;
};

int cmd_train(const TrainArgs& a) {
  EncoderConfig cfg;
  cfg.model_dim = a.dim;
  cfg.layers = a.layers;
  cfg.heads = a.heads;
  cfg.validate();
  CvDatasetOptions d;
  d.seed = a.seed;
  d.samples = a.synthetic;
  const auto data = a.dataset.empty() ? constant_velocity_dataset(d, cfg) : read_dataset(a.dataset, cfg.future_frames);
  TrainOptions o;
  o.optimizer = a.optimizer == "adam" ? OptimizerKind::Adam : OptimizerKind::GradientDescent;
  o.lr = a.lr;
  o.steps = a.steps;
  o.batch_size = a.batch;
  o.seed = a.seed;
  o.final_lr_fraction = a.final_lr_fraction;
  o.grad_clip = a.clip;
  const TrainResult r = train(data, cfg, o);
  save_model(r.params, a.out);

  d.seed = a.seed + 1000;
  d.samples = 200;
  double model = 0.0, cp = 0.0, cv = 0.0;
  std::size_t n = 0;
  const int k = cfg.future_frames - 1;
  for (const auto& s : constant_velocity_dataset(d, cfg)) {
    const auto out = forward(s.histories, r.params);
    for (std::size_t i = 0; i < s.histories.size(); ++i, ++n) {
      const auto& gt = s.futures[i][static_cast<std::size_t>(k)].vec();
      model += (out.mean_at(static_cast<Eigen::Index>(i), cfg.future_frames).vec() - gt).norm();
      cp += (constant_position_baseline(s.histories[i], cfg.future_frames)[static_cast<std::size_t>(k)].vec() - gt).norm();
      cv += (constant_velocity_baseline(s.histories[i], cfg.future_frames)[static_cast<std::size_t>(k)].vec() - gt).norm();
    }
  }
  std::cout << "parameters " << r.params.scalar_count() << "  loss " << r.loss_curve.front() << " -> "
            << r.loss_curve.back() << '\n'
            << "held-out FDE_" << cfg.horizon_s() << "s: model " << model / n << " m, constant position " << cp / n
            << " m, constant velocity " << cv / n << " m\n";
  return 0;
}

// ------------------------------------------------------------------ forward / obu

struct ForwardArgs {
  std::string endpoint, scenario;
  int period_ms = 100, stale_ms = 1000;
  std::optional<std::uint64_t> seed;
};

int cmd_forward(const ForwardArgs& a) {
  const Scenario s = generate_scenario(load_scenario(a.scenario, a.seed));
  PipelineOptions opt;
  opt.keep_messages = true;
  const auto r = run_pipeline(s, standard_calibrations(), opt);
  ForwarderConfig fc;
  fc.period = std::chrono::milliseconds(a.period_ms);
  fc.stale = std::chrono::milliseconds(a.stale_ms);
  RsuForwarder fwd(std::make_shared<UdpSender>(parse_endpoint(a.endpoint)), fc);
  fwd.start();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  // Frames are released at the 2.5 Hz perception rate, stamped just before encoding.
  for (std::size_t i = 0; i < r.messages.size() && !g_stop; ++i) {
    fwd.publish(encode_stamped(decode(r.messages[i])), i);
    std::this_thread::sleep_for(std::chrono::milliseconds(kFrameIntervalMs));
  }
  fwd.stop();
  const auto st = fwd.stats();
  std::cout << "frames " << st.frames_published << "  transmissions " << st.transmissions << "  stale suppressed "
            << st.stale_suppressed << "  send failures " << st.send_failures << '\n';
  return 0;
}

struct ObuArgs {
  int port = 0;
  std::size_t count = 0;
  int timeout_ms = 5000;
};

int cmd_obu(const ObuArgs& a) {
  auto rx = std::make_shared<UdpReceiver>(static_cast<std::uint16_t>(a.port), "0.0.0.0");
  std::cerr << "listening on udp port " << rx->port() << '\n';
  std::size_t seen = 0;
  ObuDecoder obu(rx, [&](const PerceptionMessage& m, double at) {
    ++seen;
    nlohmann::ordered_json j{{"seq", m.seq},
                             {"frame_ts", m.frame_ts_ms},
                             {"vehicles", m.vehicles.size()},
                             {"age_ms", at - static_cast<double>(m.producer_ts_ms)}};
    std::cout << j.dump() << std::endl;
  });
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop && (a.count == 0 || seen < a.count))
    if (!obu.poll(std::chrono::milliseconds(a.timeout_ms))) break;
  const auto st = obu.stats();
  std::size_t errors = 0;
  for (const auto& [code, n] : st.errors) errors += n;
  std::cerr << "decoded " << st.decoded << ", errors " << errors << '\n';
  return 0;
}

// ------------------------------------------------------------------ gateway / replay

struct GatewayArgs {
  std::string host = "127.0.0.1", token, root;
  int port = 8080;
  std::size_t fsync_every = 64, max_body = kDefaultMaxBodyBytes;
  std::uint64_t quota = 0;
};

int cmd_gateway(const GatewayArgs& a) {
  Dispatcher dispatcher;
  StorageOptions so;
  so.fsync_every = a.fsync_every;
  so.quota_bytes = a.quota;
  StorageSink storage(a.root, so);
  Gateway gw({a.host, a.port, a.token, a.max_body}, dispatcher, storage);
  gw.start();
  std::cerr << "gateway on " << a.host << ':' << gw.port() << ", storage " << a.root << '\n';
  wait_for_signal();
  gw.stop();
  storage.flush();
  const auto st = gw.stats();
  std::cerr << "accepted " << st.accepted << ", unauthorized " << st.unauthorized << ", too large " << st.too_large
            << ", storage failures " << st.storage_failures << '\n';
  return 0;
}

struct ReplayArgs {
  std::string root, topic;
  bool payloads = false;
};

int cmd_replay(const ReplayArgs& a) {
  const ReplayResult r = a.topic.empty() ? replay_all(a.root) : replay_topic(a.root, a.topic);
  for (const auto& e : r.envelopes) {
    nlohmann::ordered_json j{{"topic", e.topic},
                             {"received_ts", e.received_ts_ms},
                             {"source", e.source},
                             {"content_type", e.content_type},
                             {"bytes", e.payload.size()}};
    if (a.payloads) j["payload"] = e.payload;
    std::cout << j.dump() << '\n';
  }
  std::cerr << r.envelopes.size() << " envelopes, " << r.truncated_tail << " truncated, " << r.corrupt
            << " corrupt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"msight: roundabout perception, V2X and cloud toolkit"};
  app.require_subcommand(1);

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Simulate a scenario, run the pipeline and write the evaluation report");
  c_run->add_option("--scenario", run.scenario, "Scenario JSON (defaults if omitted)");
  c_run->add_option("--cams", run.cams, "Comma-separated camera subset");
  c_run->add_option("--model", run.model, "Trained predictor (constant velocity if omitted)");
  c_run->add_option("--out", run.out, "Report JSON (stdout if omitted)");
  c_run->add_option("--truth-out", run.truth_out, "Ground truth NDJSON");
  c_run->add_option("--tracks-out", run.tracks_out, "Track output NDJSON");
  c_run->add_option("--csv", run.csv, "Trajectory CSV for plotting");
  c_run->add_option("--seed", run.seed, "Override the scenario seed");
  c_run->add_option("--origin", run.origin, "Scene origin lat,lon");

  SimArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Write ground truth, a synthetic detection log and landmark labels");
  c_sim->add_option("--scenario", sim.scenario, "Scenario JSON");
  c_sim->add_option("--truth-out", sim.truth_out, "Ground truth NDJSON");
  c_sim->add_option("--detections-out", sim.detections_out, "Detection log NDJSON");
  c_sim->add_option("--landmarks-out", sim.landmarks_out, "Labeled landmark CSV for all four cameras");
  c_sim->add_option("--landmark-count", sim.landmark_count, "Landmarks per camera");
  c_sim->add_option("--landmark-sigma-px", sim.landmark_sigma_px, "Pixel labeling noise");
  c_sim->add_option("--seed", sim.seed, "Override the scenario seed");
  c_sim->add_option("--origin", sim.origin, "Scene origin lat,lon");

  TrackArgs trk;
  auto* c_trk = app.add_subcommand("track", "Replay a detection log through fusion and tracking");
  c_trk->add_option("--detections", trk.detections, "Detection log NDJSON")->required();
  c_trk->add_option("--calib-dir", trk.calib_dir, "Directory of <CAM>.json calibrations");
  c_trk->add_option("--cams", trk.cams, "Comma-separated camera subset");
  c_trk->add_option("--out", trk.out, "Track NDJSON (stdout if omitted)");
  c_trk->add_option("--origin", trk.origin, "ROI center lat,lon");
  c_trk->add_option("--roi-radius", trk.roi_radius, "ROI radius in meters");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate track outputs against ground truth");
  c_ev->add_option("--truth", ev.truth, "Ground truth NDJSON")->required();
  c_ev->add_option("--tracks", ev.tracks, "Track NDJSON")->required();
  c_ev->add_option("--out", ev.out, "Report JSON (stdout if omitted)");
  c_ev->add_option("--origin", ev.origin, "Scene origin lat,lon");

  LatencyArgs lat;
  auto* c_lat = app.add_subcommand("latency", "Measure phase-1 and phase-2 latency");
  c_lat->add_option("--transport", lat.transport, "loopback or udp")->check(CLI::IsMember({"loopback", "udp"}));
  c_lat->add_option("--inject-delay-ms", lat.inject_delay_ms, "Artificial transport delay");
  c_lat->add_option("--frames", lat.frames, "Frames to send");
  c_lat->add_option("--interval-ms", lat.interval_ms, "Pause between frames");
  c_lat->add_flag("--zero-work", lat.zero_work, "Send empty messages");

  CalibArgs cal;
  auto* c_cal = app.add_subcommand("calib", "Calibrate cameras from a landmark CSV");
  c_cal->add_option("--landmarks", cal.landmarks, "camera_id,u_px,v_px,lat_deg,lon_deg")->required();
  c_cal->add_option("--out-dir", cal.out_dir, "Write <CAM>.json artifacts here");
  c_cal->add_option("--origin", cal.origin, "Scene origin lat,lon");
  c_cal->add_option("--gate", cal.gate, "Mean-error gate in meters");
  c_cal->add_flag("--no-refine", cal.no_refine, "Keep the nominal lens model");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the trajectory predictor");
  c_tr->add_option("--dataset", tr.dataset, "Training NDJSON (synthetic constant velocity if omitted)");
  c_tr->add_option("--synthetic", tr.synthetic, "Synthetic scenes");
  c_tr->add_option("--out", tr.out, "Model file")->required();
  c_tr->add_option("--dim", tr.dim);
  c_tr->add_option("--layers", tr.layers);
  c_tr->add_option("--heads", tr.heads);
  c_tr->add_option("--steps", tr.steps);
  c_tr->add_option("--batch", tr.batch);
  c_tr->add_option("--lr", tr.lr);
  c_tr->add_option("--final-lr-fraction", tr.final_lr_fraction);
  c_tr->add_option("--clip", tr.clip, "Gradient-norm clip");
  c_tr->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"gd", "adam"}));
  c_tr->add_option("--seed", tr.seed);

  ForwardArgs fw;
  auto* c_fw = app.add_subcommand("forward", "Run the pipeline and broadcast frames over UDP");
  c_fw->add_option("--endpoint", fw.endpoint, "host:port")->required();
  c_fw->add_option("--period-ms", fw.period_ms);
  c_fw->add_option("--stale-ms", fw.stale_ms);
  c_fw->add_option("--scenario", fw.scenario);
  c_fw->add_option("--seed", fw.seed);

  ObuArgs obu;
  auto* c_obu = app.add_subcommand("obu", "Receive and decode broadcast frames");
  c_obu->add_option("--port", obu.port, "UDP port (0 picks one)");
  c_obu->add_option("--count", obu.count, "Stop after this many messages");
  c_obu->add_option("--timeout-ms", obu.timeout_ms, "Give up after this long without traffic");

  GatewayArgs gw;
  auto* c_gw = app.add_subcommand("gateway", "Serve the ingestion endpoint until interrupted");
  c_gw->add_option("--host", gw.host);
  c_gw->add_option("--port", gw.port);
  c_gw->add_option("--token", gw.token, "Required X-MSight-Token value");
  c_gw->add_option("--root", gw.root, "Storage directory")->required();
  c_gw->add_option("--fsync-every", gw.fsync_every);
  c_gw->add_option("--max-body", gw.max_body);
  c_gw->add_option("--quota", gw.quota, "Storage quota in bytes (0 = none)");

  ReplayArgs rp;
  auto* c_rp = app.add_subcommand("replay", "List stored envelopes");
  c_rp->add_option("--root", rp.root, "Storage directory")->required();
  c_rp->add_option("--topic", rp.topic);
  c_rp->add_flag("--payloads", rp.payloads, "Include payloads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_run) return cmd_run(run);
    if (*c_sim) return cmd_simulate(sim);
    if (*c_trk) return cmd_track(trk);
    if (*c_ev) return cmd_eval(ev);
    if (*c_lat) return cmd_latency(lat);
    if (*c_cal) return cmd_calib(cal);
    if (*c_tr) return cmd_train(tr);
    if (*c_fw) return cmd_forward(fw);
    if (*c_obu) return cmd_obu(obu);
    if (*c_gw) return cmd_gateway(gw);
    if (*c_rp) return cmd_replay(rp);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
