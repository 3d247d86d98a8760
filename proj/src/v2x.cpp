#include "msight/v2x.hpp"

#include "bytes.hpp"
#include "msight/error.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

namespace msight {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'V', '2'};
constexpr std::size_t kHeaderCrcOffset = kV2xHeaderBytes - 4;

std::uint32_t crc32_of(std::string_view s) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

[[noreturn]] void overflow(const std::string& what) { throw Error(Errc::RangeOverflow, what); }

std::int32_t quantize_angle(double deg, double limit, const char* what) {
  if (!std::isfinite(deg) || std::abs(deg) > limit) overflow(std::string(what) + " outside WGS84 range");
  return static_cast<std::int32_t>(std::llround(deg / kLatLonQuantumDeg));
}

std::uint16_t quantize_heading(double deg) {
  if (!std::isfinite(deg)) overflow("heading is not finite");
  double h = std::fmod(deg, 360.0);
  if (h < 0.0) h += 360.0;
  auto q = std::llround(h / kHeadingQuantumDeg);
  if (q >= std::llround(360.0 / kHeadingQuantumDeg)) q = 0;
  return static_cast<std::uint16_t>(q);
}

std::uint16_t quantize_speed(double mps) {
  if (!std::isfinite(mps) || mps < 0.0) overflow("speed must be finite and non-negative");
  const auto q = std::llround(mps / kSpeedQuantumMps);
  if (q > std::numeric_limits<std::uint16_t>::max()) overflow("speed exceeds 1310.7 m/s");
  return static_cast<std::uint16_t>(q);
}

WorldPoint dequantize(std::int32_t lat, std::int32_t lon) {
  return {lat * kLatLonQuantumDeg, lon * kLatLonQuantumDeg};
}

}  // namespace

std::size_t encoded_size(std::size_t vehicles, std::size_t pred_k) {
  return kV2xHeaderBytes + vehicles * (kV2xVehicleBytes + 8 * pred_k) + kV2xTrailerBytes;
}

std::string encode(const PerceptionMessage& m) {
  if (m.vehicles.size() > std::numeric_limits<std::uint16_t>::max()) overflow("more than 65535 vehicles");
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint8_t>(kV2xVersion);
  w.put<std::uint32_t>(m.seq);
  w.put<std::uint64_t>(m.producer_ts_ms);
  w.put<std::uint64_t>(m.frame_ts_ms);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(m.vehicles.size()));
  w.put<std::uint8_t>(m.pred_k);
  w.put<std::uint32_t>(crc32_of(w.str()));
  for (const auto& v : m.vehicles) {
    if (v.predicted.size() != m.pred_k)
      throw Error(Errc::InvalidArgument, "vehicle " + std::to_string(v.id) + " has " +
                                             std::to_string(v.predicted.size()) + " predicted points, expected " +
                                             std::to_string(m.pred_k));
    w.put<std::uint32_t>(v.id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(v.cls));
    w.put<std::int32_t>(quantize_angle(v.position.lat, 90.0, "latitude"));
    w.put<std::int32_t>(quantize_angle(v.position.lon, 180.0, "longitude"));
    w.put<std::uint16_t>(quantize_heading(v.heading_deg));
    w.put<std::uint16_t>(quantize_speed(v.speed_mps));
    w.put<std::uint8_t>(0);
    for (const auto& p : v.predicted) {
      w.put<std::int32_t>(quantize_angle(p.lat, 90.0, "predicted latitude"));
      w.put<std::int32_t>(quantize_angle(p.lon, 180.0, "predicted longitude"));
    }
  }
  w.put<std::uint32_t>(crc32_of(w.str()));
  return w.take();
}

PerceptionMessage decode(std::string_view bytes) {
  if (bytes.size() < kV2xHeaderBytes + kV2xTrailerBytes)
    throw Error(Errc::TruncatedMessage, "message shorter than header and trailer");
  detail::ByteReader hdr(bytes, Errc::TruncatedMessage);
  const std::string_view magic = hdr.get_bytes(4);
  const auto version = hdr.get<std::uint8_t>();
  PerceptionMessage m;
  m.seq = hdr.get<std::uint32_t>();
  m.producer_ts_ms = hdr.get<std::uint64_t>();
  m.frame_ts_ms = hdr.get<std::uint64_t>();
  const auto count = hdr.get<std::uint16_t>();
  m.pred_k = hdr.get<std::uint8_t>();
  const auto header_crc = hdr.get<std::uint32_t>();
  if (header_crc != crc32_of(bytes.substr(0, kHeaderCrcOffset))) throw Error(Errc::BadCrc, "header CRC mismatch");

  const std::size_t expected = encoded_size(count, m.pred_k);
  if (bytes.size() < expected)
    throw Error(Errc::TruncatedMessage,
                "message has " + std::to_string(bytes.size()) + " bytes, header declares " + std::to_string(expected));
  if (bytes.size() > expected) throw Error(Errc::BadCrc, "trailing bytes after the declared message length");
  detail::ByteReader trailer(bytes.substr(expected - kV2xTrailerBytes), Errc::TruncatedMessage);
  if (trailer.get<std::uint32_t>() != crc32_of(bytes.substr(0, expected - kV2xTrailerBytes)))
    throw Error(Errc::BadCrc, "message CRC mismatch");
  if (magic != std::string_view(kMagic, 4)) throw Error(Errc::BadMagic, "not an MSV2 message");
  if (version != kV2xVersion) throw Error(Errc::UnsupportedVersion, "version " + std::to_string(version));

  m.vehicles.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    VehicleRecord v;
    v.id = hdr.get<std::uint32_t>();
    const auto cls = hdr.get<std::uint8_t>();
    if (cls > static_cast<std::uint8_t>(ObjectClass::VulnerableRoadUser))
      throw Error(Errc::ParseError, "unknown class code " + std::to_string(cls));
    v.cls = static_cast<ObjectClass>(cls);
    const auto lat = hdr.get<std::int32_t>();
    const auto lon = hdr.get<std::int32_t>();
    v.position = dequantize(lat, lon);
    v.heading_deg = hdr.get<std::uint16_t>() * kHeadingQuantumDeg;
    v.speed_mps = hdr.get<std::uint16_t>() * kSpeedQuantumMps;
    hdr.get<std::uint8_t>();
    for (int k = 0; k < m.pred_k; ++k) {
      const auto plat = hdr.get<std::int32_t>();
      const auto plon = hdr.get<std::int32_t>();
      v.predicted.push_back(dequantize(plat, plon));
    }
    m.vehicles.push_back(std::move(v));
  }
  return m;
}

PerceptionMessage quantized(const PerceptionMessage& m) { return decode(encode(m)); }

std::uint64_t system_clock_ms() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count());
}

double system_clock_ms_precise() {
  return std::chrono::duration<double, std::milli>(std::chrono::system_clock::now().time_since_epoch()).count();
}

double heading_from_velocity(double v_e, double v_n) {
  double h = std::atan2(v_e, v_n) * 180.0 / std::numbers::pi;
  if (h < 0.0) h += 360.0;
  return h >= 360.0 ? 0.0 : h;
}

std::string encode_stamped(PerceptionMessage m, const WallClock& clock) {
  m.producer_ts_ms = clock();
  return encode(m);
}

std::string to_json(const PerceptionMessage& m) {
  nlohmann::ordered_json j;
  j["seq"] = m.seq;
  j["producer_ts"] = m.producer_ts_ms;
  j["frame_ts"] = m.frame_ts_ms;
  j["pred_k"] = m.pred_k;
  nlohmann::ordered_json vs = nlohmann::ordered_json::array();
  for (const auto& v : m.vehicles) {
    nlohmann::ordered_json o;
    o["id"] = v.id;
    o["cls"] = std::string(to_string(v.cls));
    o["lat"] = v.position.lat;
    o["lon"] = v.position.lon;
    o["heading"] = v.heading_deg;
    o["speed"] = v.speed_mps;
    nlohmann::json pred = nlohmann::json::array();
    for (const auto& p : v.predicted) pred.push_back({p.lat, p.lon});
    o["predicted"] = pred;
    vs.push_back(o);
  }
  j["vehicles"] = vs;
  return j.dump();
}

}  // namespace msight
