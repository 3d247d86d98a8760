#pragma once

#include "msight/detect.hpp"
#include "msight/geo.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace msight {

inline constexpr std::uint8_t kV2xVersion = 1;
inline constexpr double kLatLonQuantumDeg = 1e-7;
inline constexpr double kHeadingQuantumDeg = 0.0125;
inline constexpr double kSpeedQuantumMps = 0.02;
/// magic(4) version(1) seq(4) producer_ts(8) frame_ts(8) count(2) pred_k(1) header_crc(4)
inline constexpr std::size_t kV2xHeaderBytes = 32;
inline constexpr std::size_t kV2xVehicleBytes = 18;
inline constexpr std::size_t kV2xTrailerBytes = 4;

struct VehicleRecord {
  std::uint32_t id = 0;
  ObjectClass cls = ObjectClass::Car;
  WorldPoint position;
  double heading_deg = 0.0;  // clockwise from north, [0, 360)
  double speed_mps = 0.0;
  std::vector<WorldPoint> predicted;  // exactly pred_k points
};

struct PerceptionMessage {
  std::uint32_t seq = 0;
  std::uint64_t producer_ts_ms = 0;
  std::uint64_t frame_ts_ms = 0;
  std::uint8_t pred_k = 0;
  std::vector<VehicleRecord> vehicles;
};

std::size_t encoded_size(std::size_t vehicles, std::size_t pred_k);

/// Throws RangeOverflow for a field outside its quantized range and
/// InvalidArgument when a vehicle's prediction count differs from pred_k.
std::string encode(const PerceptionMessage& m);

/// Order of checks: minimum length, header CRC, declared length, trailer CRC,
/// magic, version. Throws TruncatedMessage, BadCrc, BadMagic, UnsupportedVersion.
PerceptionMessage decode(std::string_view bytes);

/// Quantizes every field the way the codec does (what decode(encode(m)) yields).
PerceptionMessage quantized(const PerceptionMessage& m);

/// Milliseconds since the Unix epoch.
using WallClock = std::function<std::uint64_t()>;
std::uint64_t system_clock_ms();
/// Same epoch with sub-millisecond resolution.
double system_clock_ms_precise();

/// Velocity east/north in m/s to heading clockwise from north in [0, 360).
double heading_from_velocity(double v_e, double v_n);

/// Stamps producer_ts from the clock immediately before encoding.
std::string encode_stamped(PerceptionMessage m, const WallClock& clock = system_clock_ms);

std::string to_json(const PerceptionMessage& m);

}  // namespace msight
