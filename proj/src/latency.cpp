#include "msight/latency.hpp"

#include "msight/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

namespace msight {

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw Error(Errc::EmptySet, "percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(Errc::InvalidArgument, "percentile rank must be in [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

PercentileSummary summarize(std::span<const double> values) {
  PercentileSummary s;
  s.count = values.size();
  s.p50 = percentile(values, 0.5);
  s.p90 = percentile(values, 0.9);
  s.p99 = percentile(values, 0.99);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.max = *std::max_element(values.begin(), values.end());
  return s;
}

double phase2_latency_ms(std::uint64_t producer_ts_ms, double decoded_at_ms, double clock_offset_ms) {
  const double d = decoded_at_ms + clock_offset_ms - static_cast<double>(producer_ts_ms);
  if (d < -kClockSkewToleranceMs)
    throw Error(Errc::ClockSkewDetected, "decode happened " + std::to_string(-d) + " ms before the producer timestamp");
  return d;
}

LatencyReport measure_latency(const PipelineHook& pipeline, Transport& tx, std::shared_ptr<Receiver> rx,
                              const LatencyOptions& opt) {
  using Clock = std::chrono::steady_clock;
  std::mutex mu;
  std::map<std::uint32_t, std::pair<std::uint64_t, double>> arrivals;  // seq -> (producer ts, decoded at)
  ObuDecoder obu(std::move(rx), [&](const PerceptionMessage& m, double at) {
    std::lock_guard lk(mu);
    arrivals.emplace(m.seq, std::make_pair(m.producer_ts_ms, at));
  });
  obu.start();

  std::map<std::uint32_t, double> phase1;
  std::size_t send_failures = 0;
  auto next = Clock::now();
  for (std::size_t i = 0; i < opt.frames; ++i) {
    const auto t0 = Clock::now();
    PerceptionMessage m = pipeline(i);
    const double p1 = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    m.seq = static_cast<std::uint32_t>(i);
    phase1[m.seq] = p1;
    try {
      tx.send(encode_stamped(std::move(m)));
    } catch (const Error& e) {
      if (e.code() != Errc::EndpointUnavailable) throw;
      ++send_failures;
    }
    next += opt.frame_interval;
    std::this_thread::sleep_until(next);
  }

  const auto deadline = Clock::now() + opt.drain_timeout;
  while (Clock::now() < deadline) {
    {
      std::lock_guard lk(mu);
      if (arrivals.size() + send_failures >= opt.frames) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  obu.stop();

  LatencyReport r;
  std::vector<double> p1s, p2s;
  for (const auto& [seq, p1] : phase1) {
    p1s.push_back(p1);
    const auto it = arrivals.find(seq);
    if (it == arrivals.end()) {
      ++r.lost;
      continue;
    }
    LatencyRecord rec;
    rec.seq = seq;
    rec.phase1_ms = p1;
    rec.phase2_ms = phase2_latency_ms(it->second.first, it->second.second, opt.clock_offset_ms);
    p2s.push_back(rec.phase2_ms);
    r.records.push_back(rec);
  }
  if (!p1s.empty()) r.phase1 = summarize(p1s);
  if (!p2s.empty()) r.phase2 = summarize(p2s);
  return r;
}

}  // namespace msight
