#pragma once

#include "msight/forwarder.hpp"
#include "msight/v2x.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace msight {

struct LatencyRecord {
  std::uint32_t seq = 0;
  double phase1_ms = 0.0;  // perception wall time for the frame
  double phase2_ms = 0.0;  // decode completion minus producer timestamp
};

struct PercentileSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  double max = 0.0;
};

/// Linear interpolation between closest ranks, q in [0, 1]. Throws EmptySet.
double percentile(std::span<const double> values, double q);
PercentileSummary summarize(std::span<const double> values);

inline constexpr double kClockSkewToleranceMs = 1.0;

/// decoded_at_ms + clock_offset_ms - producer_ts_ms. Throws ClockSkewDetected
/// when the result is below -1 ms.
double phase2_latency_ms(std::uint64_t producer_ts_ms, double decoded_at_ms, double clock_offset_ms = 0.0);

struct LatencyOptions {
  std::size_t frames = 200;
  std::chrono::milliseconds frame_interval{0};
  /// Added to consumer timestamps when producer and consumer clocks differ.
  double clock_offset_ms = 0.0;
  std::chrono::milliseconds drain_timeout{2000};
};

struct LatencyReport {
  std::vector<LatencyRecord> records;  // delivered frames, by seq
  PercentileSummary phase1;
  PercentileSummary phase2;
  std::size_t lost = 0;
};

/// Produces one message per frame; phase 1 is the time spent inside this call.
using PipelineHook = std::function<PerceptionMessage(std::size_t frame)>;

/// Runs the pipeline hook frame by frame, stamps and encodes each result,
/// sends it over tx and decodes it from rx on a separate thread.
/// Throws ClockSkewDetected.
LatencyReport measure_latency(const PipelineHook& pipeline, Transport& tx, std::shared_ptr<Receiver> rx,
                              const LatencyOptions& opt = {});

}  // namespace msight
