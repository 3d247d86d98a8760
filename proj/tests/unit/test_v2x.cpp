#include "msight/error.hpp"
#include "msight/forwarder.hpp"
#include "msight/latency.hpp"
#include "msight/v2x.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <thread>

using namespace msight;
using namespace std::chrono_literals;

namespace {

std::string read_file(const std::string& name) {
  std::ifstream f(std::string(MSIGHT_TEST_DATA) + "/" + name, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Bitwise reflected CRC-32 (IEEE), independent of zlib.
std::uint32_t crc32_oracle(std::string_view s) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (unsigned char b : s) {
    c ^= b;
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
  }
  return ~c;
}

void put_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

// Rewrites both CRC fields after a deliberate edit.
void reseal(std::string& s) {
  put_u32(s, 28, crc32_oracle(std::string_view(s).substr(0, 28)));
  put_u32(s, s.size() - 4, crc32_oracle(std::string_view(s).substr(0, s.size() - 4)));
}

Errc code_of(std::string_view bytes) {
  try {
    decode(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::InvalidArgument;
}

PerceptionMessage golden_one() {
  PerceptionMessage m;
  m.seq = 7;
  m.producer_ts_ms = 1700000000400;
  m.frame_ts_ms = 1700000000000;
  m.pred_k = 3;
  VehicleRecord v;
  v.id = 42;
  v.cls = ObjectClass::Car;
  v.position = {42.2808100, -83.7430000};
  v.heading_deg = 90.0;
  v.speed_mps = 5.5;
  v.predicted = {{42.2808200, -83.7429000}, {42.2808300, -83.7428000}, {42.2808400, -83.7427000}};
  m.vehicles.push_back(v);
  return m;
}

PerceptionMessage random_message(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lat(-90.0, 90.0), lon(-180.0, 180.0), heading(0.0, 360.0), speed(0.0, 60.0);
  std::uniform_int_distribution<int> count(0, 12), k(0, 5), cls(0, 2);
  std::uniform_int_distribution<std::uint32_t> u32;
  PerceptionMessage m;
  m.seq = u32(rng);
  m.producer_ts_ms = rng();
  m.frame_ts_ms = rng();
  m.pred_k = static_cast<std::uint8_t>(k(rng));
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    VehicleRecord v;
    v.id = u32(rng);
    v.cls = static_cast<ObjectClass>(cls(rng));
    v.position = {lat(rng), lon(rng)};
    v.heading_deg = heading(rng);
    v.speed_mps = speed(rng);
    for (int j = 0; j < m.pred_k; ++j) v.predicted.push_back({lat(rng), lon(rng)});
    m.vehicles.push_back(v);
  }
  return m;
}

double angle_diff(double a, double b) {
  const double d = std::fmod(std::abs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

}  // namespace

TEST(Codec, GoldenFixtures) {
  PerceptionMessage empty;
  empty.seq = 1;
  empty.producer_ts_ms = 1700000000000;
  empty.frame_ts_ms = 1699999999600;
  empty.pred_k = 3;
  const std::string e = encode(empty);
  EXPECT_EQ(e.size(), 36u);
  EXPECT_EQ(e, read_file("v2x_golden_empty.bin"));
  EXPECT_EQ(encode(golden_one()), read_file("v2x_golden_one.bin"));
}

TEST(Codec, SizeFormula) {
  EXPECT_EQ(encoded_size(0, 0), 36u);
  EXPECT_EQ(encoded_size(1, 3), 36u + 18u + 24u);
  EXPECT_EQ(encoded_size(10, 2), 36u + 10u * 34u);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto m = random_message(rng);
    EXPECT_EQ(encode(m).size(), encoded_size(m.vehicles.size(), m.pred_k));
  }
}

TEST(Codec, LatitudeQuantization) {
  const std::string b = encode(golden_one());
  const auto lat = static_cast<std::int32_t>(static_cast<unsigned char>(b[37]) | static_cast<unsigned char>(b[38]) << 8 |
                                             static_cast<unsigned char>(b[39]) << 16 |
                                             static_cast<unsigned char>(b[40]) << 24);
  EXPECT_EQ(lat, 422808100);
}

TEST(Codec, CrcMatchesOracle) {
  const std::string b = read_file("v2x_golden_one.bin");
  std::string copy = b;
  reseal(copy);
  EXPECT_EQ(copy, b);
}

TEST(Codec, RoundTripWithinQuanta) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 2000; ++i) {
    const auto m = random_message(rng);
    const auto d = decode(encode(m));
    ASSERT_EQ(d.vehicles.size(), m.vehicles.size());
    EXPECT_EQ(d.seq, m.seq);
    EXPECT_EQ(d.producer_ts_ms, m.producer_ts_ms);
    EXPECT_EQ(d.frame_ts_ms, m.frame_ts_ms);
    EXPECT_EQ(d.pred_k, m.pred_k);
    for (std::size_t j = 0; j < m.vehicles.size(); ++j) {
      const auto& a = m.vehicles[j];
      const auto& b = d.vehicles[j];
      EXPECT_EQ(a.id, b.id);
      EXPECT_EQ(a.cls, b.cls);
      EXPECT_LE(std::abs(a.position.lat - b.position.lat), 0.5 * kLatLonQuantumDeg + 1e-12);
      EXPECT_LE(std::abs(a.position.lon - b.position.lon), 0.5 * kLatLonQuantumDeg + 1e-12);
      EXPECT_LE(angle_diff(a.heading_deg, b.heading_deg), 0.5 * kHeadingQuantumDeg + 1e-9);
      EXPECT_LE(std::abs(a.speed_mps - b.speed_mps), 0.5 * kSpeedQuantumMps + 1e-12);
      for (std::size_t k = 0; k < a.predicted.size(); ++k) {
        EXPECT_LE(std::abs(a.predicted[k].lat - b.predicted[k].lat), 0.5 * kLatLonQuantumDeg + 1e-12);
        EXPECT_LE(std::abs(a.predicted[k].lon - b.predicted[k].lon), 0.5 * kLatLonQuantumDeg + 1e-12);
      }
    }
    // quantized values are a fixed point
    EXPECT_EQ(encode(d), encode(m));
  }
}

TEST(Codec, EverySingleBitFlipIsBadCrc) {
  for (const char* name : {"v2x_golden_empty.bin", "v2x_golden_one.bin"}) {
    const std::string b = read_file(name);
    for (std::size_t i = 0; i < b.size() * 8; ++i) {
      std::string f = b;
      f[i / 8] = static_cast<char>(f[i / 8] ^ (1 << (i % 8)));
      EXPECT_EQ(code_of(f), Errc::BadCrc) << name << " bit " << i;
    }
  }
}

TEST(Codec, TruncationAndTrailingBytes) {
  const std::string b = read_file("v2x_golden_one.bin");
  EXPECT_EQ(code_of(b.substr(0, b.size() / 2)), Errc::TruncatedMessage);
  for (std::size_t n = 0; n < b.size(); ++n) EXPECT_EQ(code_of(b.substr(0, n)), Errc::TruncatedMessage) << n;
  EXPECT_EQ(code_of(b + "x"), Errc::BadCrc);
}

TEST(Codec, MagicAndVersion) {
  std::string b = read_file("v2x_golden_one.bin");
  std::string magic = b;
  magic[3] = '3';
  reseal(magic);
  EXPECT_EQ(code_of(magic), Errc::BadMagic);
  std::string version = b;
  version[4] = 2;
  reseal(version);
  EXPECT_EQ(code_of(version), Errc::UnsupportedVersion);
}

TEST(Codec, RangeErrors) {
  auto code = [](const PerceptionMessage& m) {
    try {
      encode(m);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::InvalidArgument;
  };
  PerceptionMessage m = golden_one();
  m.vehicles[0].position.lat = 90.5;
  EXPECT_EQ(code(m), Errc::RangeOverflow);
  m = golden_one();
  m.vehicles[0].position.lon = std::nan("");
  EXPECT_EQ(code(m), Errc::RangeOverflow);
  m = golden_one();
  m.vehicles[0].speed_mps = 1400.0;
  EXPECT_EQ(code(m), Errc::RangeOverflow);
  m.vehicles[0].speed_mps = -1.0;
  EXPECT_EQ(code(m), Errc::RangeOverflow);
  m = golden_one();
  m.vehicles[0].predicted[1].lon = 181.0;
  EXPECT_EQ(code(m), Errc::RangeOverflow);
  m = golden_one();
  m.vehicles[0].predicted.pop_back();
  EXPECT_THROW(encode(m), Error);
  m = golden_one();
  m.vehicles.resize(65536, m.vehicles[0]);
  EXPECT_EQ(code(m), Errc::RangeOverflow);
}

TEST(Codec, HeadingWraps) {
  PerceptionMessage m = golden_one();
  m.vehicles[0].heading_deg = 359.999;
  EXPECT_EQ(decode(encode(m)).vehicles[0].heading_deg, 0.0);
  m.vehicles[0].heading_deg = -90.0;
  EXPECT_DOUBLE_EQ(decode(encode(m)).vehicles[0].heading_deg, 270.0);
  EXPECT_DOUBLE_EQ(heading_from_velocity(1.0, 0.0), 90.0);
  EXPECT_DOUBLE_EQ(heading_from_velocity(0.0, -1.0), 180.0);
  EXPECT_DOUBLE_EQ(heading_from_velocity(-1.0, 0.0), 270.0);
}

TEST(Codec, FuzzNeverCrashes) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> byte(0, 255);
  const std::string base = encode(golden_one());
  for (int i = 0; i < 20000; ++i) {
    std::string s;
    if (i % 2 == 0) {
      s.resize(static_cast<std::size_t>(byte(rng)));
      for (auto& c : s) c = static_cast<char>(byte(rng));
    } else {
      s = base;
      const int edits = 1 + byte(rng) % 6;
      for (int e = 0; e < edits; ++e) s[static_cast<std::size_t>(byte(rng)) % s.size()] = static_cast<char>(byte(rng));
      if (byte(rng) % 3 == 0) reseal(s);
    }
    try {
      decode(s);
    } catch (const Error&) {
    }
  }
  SUCCEED();
}

TEST(Forwarder, RepeatsEachFrameAtLeastTwice) {
  auto link = std::make_shared<LoopbackLink>();
  RsuForwarder fwd(link);
  const auto t0 = RsuForwarder::Clock::time_point{} + 1h;
  for (int tick = 0; tick < 40; ++tick) {
    const auto now = t0 + tick * 100ms;
    if (tick % 4 == 0) fwd.publish(encode(golden_one()), static_cast<std::uint64_t>(tick / 4), now);
    fwd.tick(now);
  }
  const auto s = fwd.stats();
  ASSERT_EQ(s.per_frame.size(), 10u);
  for (const auto& [frame, n] : s.per_frame) EXPECT_GE(n, 2u) << frame;
  EXPECT_EQ(link->pending(), 40u);
}

TEST(Forwarder, StaleFramesSuppressed) {
  auto link = std::make_shared<LoopbackLink>();
  RsuForwarder fwd(link);
  const auto t0 = RsuForwarder::Clock::time_point{} + 1h;
  fwd.publish(encode(golden_one()), 1, t0);
  for (int tick = 0; tick <= 20; ++tick) fwd.tick(t0 + tick * 100ms);
  const auto s = fwd.stats();
  EXPECT_EQ(s.transmissions, 11u);  // ages 0 .. 1000 ms
  EXPECT_EQ(s.stale_suppressed, 10u);
}

TEST(Forwarder, BacksOffWhileEndpointDown) {
  auto link = std::make_shared<LoopbackLink>();
  link->set_online(false);
  ForwarderConfig cfg;
  RsuForwarder fwd(link, cfg);
  const auto t0 = RsuForwarder::Clock::time_point{} + 1h;
  for (int tick = 0; tick < 30; ++tick) {
    if (tick % 4 == 0) fwd.publish(encode(golden_one()), static_cast<std::uint64_t>(tick), t0 + tick * 100ms);
    fwd.tick(t0 + tick * 100ms);
  }
  auto s = fwd.stats();
  EXPECT_EQ(s.transmissions, 0u);
  // failures at 0, 100, 300, 700, 1500 ms then at the 2 s cap
  EXPECT_EQ(s.send_failures, 5u);
  EXPECT_GT(s.backoff_skips, 0u);
  link->set_online(true);
  for (int tick = 30; tick < 60; ++tick) {
    if (tick % 4 == 0) fwd.publish(encode(golden_one()), static_cast<std::uint64_t>(tick), t0 + tick * 100ms);
    fwd.tick(t0 + tick * 100ms);
  }
  s = fwd.stats();
  EXPECT_GT(s.transmissions, 0u);
}

TEST(Forwarder, PerceptionLoopIndependentOfReceiver) {
  auto frame_time = [](bool online) {
    auto link = std::make_shared<LoopbackLink>();
    link->set_online(online);
    ForwarderConfig cfg;
    cfg.period = 5ms;
    RsuForwarder fwd(link, cfg);
    fwd.start();
    std::vector<double> times;
    volatile double sink = 0.0;
    for (int f = 0; f < 60; ++f) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < 200000; ++i) sink = sink + std::sqrt(static_cast<double>(i));
      fwd.publish(encode(golden_one()), static_cast<std::uint64_t>(f));
      times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    fwd.stop();
    return percentile(times, 0.5);
  };
  frame_time(true);  // warm-up
  const double on = frame_time(true);
  const double off = frame_time(false);
  EXPECT_LT(std::abs(off - on) / on, 0.05) << "online " << on << " ms, offline " << off << " ms";
}

TEST(Forwarder, ThreadedBroadcastOverUdp) {
  auto rx = std::make_shared<UdpReceiver>(0);
  auto tx = std::make_shared<UdpSender>(Endpoint{"127.0.0.1", rx->port()});
  ForwarderConfig cfg;
  cfg.period = 20ms;
  RsuForwarder fwd(tx, cfg);
  std::vector<PerceptionMessage> got;
  ObuDecoder obu(rx, [&](const PerceptionMessage& m, double) { got.push_back(m); });
  fwd.publish(encode(golden_one()), 1);
  fwd.start();
  for (int i = 0; i < 50 && got.size() < 3; ++i) obu.poll(50ms);
  fwd.stop();
  ASSERT_GE(got.size(), 3u);
  EXPECT_EQ(got[0].seq, 7u);
  EXPECT_EQ(obu.stats().decoded, got.size());
}

TEST(Forwarder, EndpointErrors) {
  EXPECT_THROW(parse_endpoint("nohostport"), Error);
  EXPECT_THROW(parse_endpoint("host:99999"), Error);
  EXPECT_EQ(parse_endpoint("10.0.0.1:5005").port, 5005);
  try {
    UdpSender bad(Endpoint{"no-such-host.invalid", 5000});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EndpointUnavailable);
  }
  // Nothing listens on this port: the ICMP error shows up on a later send.
  std::uint16_t closed;
  {
    UdpReceiver tmp(0);
    closed = tmp.port();
  }
  UdpSender s(Endpoint{"127.0.0.1", closed});
  bool refused = false;
  for (int i = 0; i < 20 && !refused; ++i) {
    try {
      s.send("x");
    } catch (const Error& e) {
      refused = e.code() == Errc::EndpointUnavailable;
    }
    std::this_thread::sleep_for(5ms);
  }
  EXPECT_TRUE(refused);
}

TEST(Obu, CountsDecodeErrors) {
  auto link = std::make_shared<LoopbackLink>();
  ObuDecoder obu(link, nullptr);
  link->send("garbage");
  link->send(encode(golden_one()));
  std::string flipped = encode(golden_one());
  flipped[40] = static_cast<char>(flipped[40] ^ 1);
  link->send(flipped);
  while (obu.poll(10ms)) {
  }
  const auto s = obu.stats();
  EXPECT_EQ(s.decoded, 1u);
  EXPECT_EQ(s.errors.at(Errc::TruncatedMessage), 1u);
  EXPECT_EQ(s.errors.at(Errc::BadCrc), 1u);
}

TEST(Latency, PercentileOracle) {
  const std::vector<double> v{5.0, 1.0, 3.0, 2.0, 4.0};
  EXPECT_DOUBLE_EQ(percentile(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile(v, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(percentile(v, 0.9), 4.6);
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.max, 5.0);
  EXPECT_THROW(percentile(std::vector<double>{}, 0.5), Error);
}

TEST(Latency, ClockSkew) {
  EXPECT_DOUBLE_EQ(phase2_latency_ms(1000, 1025.0), 25.0);
  EXPECT_DOUBLE_EQ(phase2_latency_ms(1000, 999.5), -0.5);
  try {
    phase2_latency_ms(1000, 990.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ClockSkewDetected);
  }
  EXPECT_DOUBLE_EQ(phase2_latency_ms(1000, 990.0, 15.0), 5.0);
}

TEST(Latency, LoopbackBudgetAndPassThrough) {
  LoopbackLink link;
  auto rx = std::shared_ptr<Receiver>(&link, [](Receiver*) {});
  LatencyOptions opt;
  opt.frames = 100;
  opt.frame_interval = 2ms;
  const PerceptionMessage msg = golden_one();
  const auto r = measure_latency([&](std::size_t) { return msg; }, link, rx, opt);
  EXPECT_EQ(r.lost, 0u);
  EXPECT_EQ(r.records.size(), 100u);
  EXPECT_LT(r.phase1.p50, 1.0);
  EXPECT_LT(r.phase2.p50, 5.0);
}

TEST(Latency, InjectedDelay) {
  LoopbackLink link(25ms);
  auto rx = std::shared_ptr<Receiver>(&link, [](Receiver*) {});
  LatencyOptions opt;
  opt.frames = 60;
  opt.frame_interval = 5ms;
  const PerceptionMessage msg = golden_one();
  const auto r = measure_latency([&](std::size_t) { return msg; }, link, rx, opt);
  EXPECT_NEAR(r.phase2.p50, 25.0, 2.0);
}
