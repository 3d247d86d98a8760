#include "msight/metrics.hpp"

#include "msight/assignment.hpp"
#include "msight/error.hpp"
#include "msight/predictor.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>

namespace msight {

namespace {

void require_denominator(std::size_t d, const char* what) {
  if (d == 0) throw Error(Errc::EmptyDenominator, std::string(what) + " is zero");
}

template <class T>
std::optional<double> ratio(double num, T den) {
  if (den == 0) return std::nullopt;
  return num / static_cast<double>(den);
}

}  // namespace

double fp_rate_pct(std::size_t fp, std::size_t dets) {
  require_denominator(dets, "|Dets|");
  return 100.0 * static_cast<double>(fp) / static_cast<double>(dets);
}

double fn_rate_pct(std::size_t fn, std::size_t gt_dets) {
  require_denominator(gt_dets, "|gtDets|");
  return 100.0 * static_cast<double>(fn) / static_cast<double>(gt_dets);
}

double mota(std::size_t fn, std::size_t fp, std::size_t id_switches, std::size_t gt_dets) {
  require_denominator(gt_dets, "|gtDets|");
  return 1.0 - static_cast<double>(fn + fp + id_switches) / static_cast<double>(gt_dets);
}

int count_id_switches(std::span<const std::optional<std::uint64_t>> ids) {
  int n = 0;
  std::optional<std::uint64_t> last;
  for (const auto& id : ids) {
    if (!id) continue;
    if (last && *last != *id) ++n;
    last = id;
  }
  return n;
}

double longest_track_pct(std::span<const std::optional<std::uint64_t>> ids) {
  require_denominator(ids.size(), "trip frame count");
  std::size_t best = 0;
  std::optional<std::uint64_t> cur;
  std::size_t first = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!ids[i]) continue;
    if (!cur || *cur != *ids[i]) {
      cur = ids[i];
      first = i;
    }
    best = std::max(best, i - first + 1);
  }
  return 100.0 * static_cast<double>(best) / static_cast<double>(ids.size());
}

SplitError split_error(const PlanePoint& estimate, const PlanePoint& truth, const Eigen::Vector2d& truth_velocity) {
  const FdeResult r = fde(std::span(&estimate, 1), std::span(&truth, 1), 1, truth_velocity);
  return {r.lateral, r.longitudinal};
}

Eigen::Vector2d truth_velocity(const GroundTruthTrack& t, std::int64_t ts_ms) {
  const auto n = t.samples.size();
  if (n < 2) return Eigen::Vector2d::Zero();
  const double pos = static_cast<double>(ts_ms - t.first_ts()) / kTruthIntervalMs;
  const auto i = static_cast<std::size_t>(std::clamp(std::llround(pos), 0LL, static_cast<long long>(n - 1)));
  const std::size_t a = i == 0 ? 0 : i - 1;
  const std::size_t b = i + 1 == n ? i : i + 1;
  const double dt = static_cast<double>(t.samples[b].ts_ms - t.samples[a].ts_ms) / 1000.0;
  return (t.samples[b].position.vec() - t.samples[a].position.vec()) / dt;
}

std::optional<double> TripMetrics::fn_rate() const {
  return gt_dets ? std::optional(fn_rate_pct(fn, gt_dets)) : std::nullopt;
}
std::optional<double> TripMetrics::fp_rate() const { return dets ? std::optional(fp_rate_pct(fp, dets)) : std::nullopt; }
std::optional<double> TripMetrics::lat_err() const { return ratio(lat_abs_sum, tp); }
std::optional<double> TripMetrics::lon_err() const { return ratio(lon_abs_sum, tp); }
std::optional<double> TripMetrics::mota_score() const {
  return gt_dets ? std::optional(mota(fn, fp, static_cast<std::size_t>(id_switch), gt_dets)) : std::nullopt;
}
std::optional<double> TripMetrics::fde_lat() const { return ratio(fde_lat_sum, predictions); }
std::optional<double> TripMetrics::fde_lon() const { return ratio(fde_lon_sum, predictions); }
std::optional<double> TripMetrics::pred_fp_rate() const {
  const auto r = ratio(static_cast<double>(pred_fp), predictions);
  return r ? std::optional(100.0 * *r) : std::nullopt;
}

TripMetrics aggregate(std::span<const TripMetrics> rows, std::size_t extra_fp) {
  TripMetrics out;
  double longest_weighted = 0.0;
  std::size_t longest_weight = 0;
  for (const auto& r : rows) {
    out.gt_dets += r.gt_dets;
    out.dets += r.dets;
    out.tp += r.tp;
    out.fp += r.fp;
    out.fn += r.fn;
    out.id_switch += r.id_switch;
    out.lat_abs_sum += r.lat_abs_sum;
    out.lon_abs_sum += r.lon_abs_sum;
    out.predictions += r.predictions;
    out.pred_fp += r.pred_fp;
    out.fde_lat_sum += r.fde_lat_sum;
    out.fde_lon_sum += r.fde_lon_sum;
    if (r.longest_track) {
      longest_weighted += *r.longest_track * static_cast<double>(r.gt_dets);
      longest_weight += r.gt_dets;
    }
  }
  out.fp += extra_fp;
  out.dets += extra_fp;
  out.longest_track = ratio(longest_weighted, longest_weight);
  return out;
}

EvalReport evaluate(std::span<const GroundTruthTrack> truth, std::span<const EvalOutput> outputs,
                    const EvalOptions& opt) {
  EvalReport rep;
  rep.rows.resize(truth.size());
  std::vector<std::vector<std::optional<std::uint64_t>>> ids(truth.size());
  std::map<std::int64_t, std::vector<std::size_t>> objects_at;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    rep.rows[k].truth_id = truth[k].id;
    rep.rows[k].trip = truth[k].trip;
    const auto expected = truth[k].expected_timestamps();
    rep.rows[k].gt_dets = expected.size();
    ids[k].assign(expected.size(), std::nullopt);
    for (auto ts : expected) objects_at[ts].push_back(k);
  }

  std::map<std::int64_t, std::vector<std::size_t>> outputs_at;
  for (std::size_t j = 0; j < outputs.size(); ++j) {
    const auto ts = outputs[j].ts_ms;
    auto it = objects_at.lower_bound(ts - opt.ts_tolerance_ms);
    std::optional<std::int64_t> best;
    for (; it != objects_at.end() && it->first <= ts + opt.ts_tolerance_ms; ++it)
      if (!best || std::llabs(it->first - ts) < std::llabs(*best - ts)) best = it->first;
    if (best)
      outputs_at[*best].push_back(j);
    else
      ++rep.unattributed_fp;
  }

  const auto horizon_ms = opt.pred_k * opt.frame_interval_ms;
  for (const auto& [ts, objs] : objects_at) {
    const auto oit = outputs_at.find(ts);
    const std::vector<std::size_t> none;
    const auto& outs = oit == outputs_at.end() ? none : oit->second;
    std::vector<TruthSample> pos;
    pos.reserve(objs.size());
    for (auto k : objs) pos.push_back(*truth[k].at(ts));

    Eigen::MatrixXd cost(static_cast<Eigen::Index>(objs.size()), static_cast<Eigen::Index>(outs.size()));
    for (std::size_t a = 0; a < objs.size(); ++a)
      for (std::size_t b = 0; b < outs.size(); ++b) {
        const double d = (outputs[outs[b]].position.vec() - pos[a].position.vec()).norm();
        cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d <= opt.association_radius_m ? d : kForbiddenCost;
      }
    const Assignment asg = hungarian(cost);

    for (const auto& [a, b] : asg.matches) {
      const std::size_t k = objs[static_cast<std::size_t>(a)];
      const EvalOutput& o = outputs[outs[static_cast<std::size_t>(b)]];
      TripMetrics& row = rep.rows[k];
      const SplitError e = split_error(o.position, pos[static_cast<std::size_t>(a)].position, truth_velocity(truth[k], ts));
      FrameLabel label{truth[k].id, ts, std::nullopt, false, e.lateral, e.longitudinal};
      ++row.dets;
      if (std::abs(e.lateral) < opt.lateral_gate_m) {
        ++row.tp;
        row.lat_abs_sum += std::abs(e.lateral);
        row.lon_abs_sum += std::abs(e.longitudinal);
        label.tp = true;
        label.output_id = o.id;
        ids[k][static_cast<std::size_t>((ts - truth[k].first_ts()) / opt.frame_interval_ms)] = o.id;
        const auto future = truth[k].at(ts + horizon_ms);
        if (o.predicted_final && future) {
          const SplitError f = split_error(*o.predicted_final, future->position, truth_velocity(truth[k], future->ts_ms));
          ++row.predictions;
          row.fde_lat_sum += std::abs(f.lateral);
          row.fde_lon_sum += std::abs(f.longitudinal);
          if (std::abs(f.lateral) > opt.lateral_gate_m) ++row.pred_fp;
        }
      } else {
        ++row.fn;
        ++row.fp;
      }
      rep.labels.push_back(label);
    }
    for (int a : asg.unmatched_rows) {
      const std::size_t k = objs[static_cast<std::size_t>(a)];
      ++rep.rows[k].fn;
      rep.labels.push_back({truth[k].id, ts, std::nullopt, false, 0.0, 0.0});
    }
    for (int b : asg.unmatched_cols) {
      const EvalOutput& o = outputs[outs[static_cast<std::size_t>(b)]];
      std::optional<std::size_t> nearest;
      double best = opt.association_radius_m;
      for (std::size_t a = 0; a < objs.size(); ++a) {
        const double d = (o.position.vec() - pos[a].position.vec()).norm();
        if (d <= best) {
          best = d;
          nearest = objs[a];
        }
      }
      if (nearest) {
        ++rep.rows[*nearest].fp;
        ++rep.rows[*nearest].dets;
      } else {
        ++rep.unattributed_fp;
      }
    }
  }

  std::vector<TripMetrics> trips;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    auto& row = rep.rows[k];
    row.id_switch = count_id_switches(ids[k]);
    if (!ids[k].empty()) row.longest_track = longest_track_pct(ids[k]);
    if (row.trip >= 0) trips.push_back(row);
  }
  rep.trips = aggregate(trips);
  rep.overall = aggregate(rep.rows, rep.unattributed_fp);
  return rep;
}

namespace {

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json row_json(const TripMetrics& r) {
  nlohmann::ordered_json j;
  j["gtDets"] = r.gt_dets;
  j["Dets"] = r.dets;
  j["TP"] = r.tp;
  j["FP"] = r.fp;
  j["FN"] = r.fn;
  j["FN rate"] = opt_json(r.fn_rate());
  j["FP rate"] = opt_json(r.fp_rate());
  j["Lat. error"] = opt_json(r.lat_err());
  j["Lon. error"] = opt_json(r.lon_err());
  j["#ID Switch"] = r.id_switch;
  j["Longest Track"] = opt_json(r.longest_track);
  j["MOTA"] = opt_json(r.mota_score());
  j["Predictions"] = r.predictions;
  j["Pred FP rate"] = opt_json(r.pred_fp_rate());
  j["FDE_1.2s(Lat. error)"] = opt_json(r.fde_lat());
  j["FDE_1.2s(Lon. error)"] = opt_json(r.fde_lon());
  return j;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  auto trips = nlohmann::ordered_json::array();
  auto objects = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    auto rj = row_json(row);
    nlohmann::ordered_json head;
    head["object"] = row.truth_id;
    head["trip"] = row.trip;
    head.update(rj);
    (row.trip >= 0 ? trips : objects).push_back(head);
  }
  j["trips"] = trips;
  j["Overall"] = row_json(r.trips);
  j["background_objects"] = objects;
  auto all = row_json(r.overall);
  all["unattributed FP"] = r.unattributed_fp;
  j["all_objects"] = all;
  if (r.latency_ms) {
    const auto& l = *r.latency_ms;
    j["latency_ms"] = {{"count", l.count}, {"mean", l.mean}, {"p50", l.p50}, {"p90", l.p90}, {"p99", l.p99}, {"max", l.max}};
  }
  return j.dump(2);
}

namespace {

template <class F>
void for_each_line(std::istream& in, F&& f) {
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, "line " + std::to_string(no) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<GroundTruthTrack> read_truth_ndjson(std::istream& in, const LocalFrame& frame) {
  std::map<std::uint32_t, GroundTruthTrack> by_id;
  for_each_line(in, [&](const nlohmann::json& j) {
    auto& t = by_id[j.at("id").get<std::uint32_t>()];
    t.id = j.at("id").get<std::uint32_t>();
    t.trip = j.value("trip", -1);
    if (j.contains("cls")) t.cls = class_from_string(j.at("cls").get<std::string>());
    TruthSample s;
    s.ts_ms = j.at("ts").get<std::int64_t>();
    s.position = frame.to_plane({j.at("lat").get<double>(), j.at("lon").get<double>()});
    s.heading_rad = j.value("heading", 0.0);
    s.speed_mps = j.value("speed", 0.0);
    t.samples.push_back(s);
  });
  std::vector<GroundTruthTrack> out;
  for (auto& [id, t] : by_id) {
    std::sort(t.samples.begin(), t.samples.end(), [](const auto& a, const auto& b) { return a.ts_ms < b.ts_ms; });
    for (std::size_t i = 1; i < t.samples.size(); ++i)
      if (t.samples[i].ts_ms - t.samples[i - 1].ts_ms != kTruthIntervalMs)
        throw Error(Errc::ParseError, "truth object " + std::to_string(id) + " is not sampled every 20 ms");
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<EvalOutput> read_outputs_ndjson(std::istream& in, const LocalFrame& frame) {
  std::vector<EvalOutput> out;
  for_each_line(in, [&](const nlohmann::json& j) {
    EvalOutput o;
    o.ts_ms = j.at("ts").get<std::int64_t>();
    o.id = j.at("id").get<std::uint64_t>();
    o.position = frame.to_plane({j.at("lat").get<double>(), j.at("lon").get<double>()});
    if (j.contains("pred") && !j.at("pred").empty()) {
      const auto& last = j.at("pred").back();
      o.predicted_final = frame.to_plane({last.at(0).get<double>(), last.at(1).get<double>()});
    }
    out.push_back(o);
  });
  return out;
}

}  // namespace msight
