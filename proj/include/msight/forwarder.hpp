#pragma once

#include "msight/error.hpp"
#include "msight/v2x.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace msight {

/// Datagram sink. send() throws EndpointUnavailable when the peer cannot be reached.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(std::string_view datagram) = 0;
};

/// Datagram source.
class Receiver {
 public:
  virtual ~Receiver() = default;
  virtual std::optional<std::string> receive(std::chrono::milliseconds timeout) = 0;
};

/// In-process link that delivers each datagram a fixed delay after it was sent.
class LoopbackLink : public Transport, public Receiver {
 public:
  explicit LoopbackLink(std::chrono::microseconds delay = std::chrono::microseconds(0));

  void send(std::string_view datagram) override;
  std::optional<std::string> receive(std::chrono::milliseconds timeout) override;
  /// While offline every send throws EndpointUnavailable.
  void set_online(bool online);
  std::size_t pending() const;

 private:
  using Clock = std::chrono::steady_clock;
  std::chrono::microseconds delay_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<Clock::time_point, std::string>> queue_;
  bool online_ = true;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// "host:port". Throws InvalidArgument.
Endpoint parse_endpoint(std::string_view s);

class UdpSender : public Transport {
 public:
  /// Throws EndpointUnavailable when the host does not resolve.
  explicit UdpSender(const Endpoint& ep);
  ~UdpSender() override;
  UdpSender(const UdpSender&) = delete;
  UdpSender& operator=(const UdpSender&) = delete;

  void send(std::string_view datagram) override;

 private:
  int fd_ = -1;
};

class UdpReceiver : public Receiver {
 public:
  /// Port 0 picks a free port.
  explicit UdpReceiver(std::uint16_t port, const std::string& bind_host = "127.0.0.1");
  ~UdpReceiver() override;
  UdpReceiver(const UdpReceiver&) = delete;
  UdpReceiver& operator=(const UdpReceiver&) = delete;

  std::optional<std::string> receive(std::chrono::milliseconds timeout) override;
  std::uint16_t port() const { return port_; }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

struct ForwarderConfig {
  std::chrono::milliseconds period{100};
  std::chrono::milliseconds stale{1000};
  std::chrono::milliseconds backoff_initial{100};
  std::chrono::milliseconds backoff_max{2000};
};

struct ForwarderStats {
  std::uint64_t transmissions = 0;
  std::uint64_t stale_suppressed = 0;
  std::uint64_t send_failures = 0;
  std::uint64_t backoff_skips = 0;
  std::uint64_t frames_published = 0;
  /// Transmissions per published frame sequence number.
  std::map<std::uint64_t, std::uint64_t> per_frame;
};

/// Periodic broadcaster of the most recently published encoded frame.
/// publish() only swaps a slot under a short lock, so the perception loop
/// never waits on the network.
class RsuForwarder {
 public:
  using Clock = std::chrono::steady_clock;

  RsuForwarder(std::shared_ptr<Transport> transport, ForwarderConfig cfg = {});
  ~RsuForwarder();
  RsuForwarder(const RsuForwarder&) = delete;
  RsuForwarder& operator=(const RsuForwarder&) = delete;

  /// frame_id identifies the frame in the statistics.
  void publish(std::string encoded, std::uint64_t frame_id);
  void publish(std::string encoded, std::uint64_t frame_id, Clock::time_point now);

  /// One broadcast opportunity at time now. The worker thread calls this every period.
  void tick(Clock::time_point now);

  void start();
  void stop();
  ForwarderStats stats() const;

 private:
  struct Slot {
    std::shared_ptr<const std::string> bytes;
    std::uint64_t frame_id = 0;
    Clock::time_point published;
  };

  std::shared_ptr<Transport> transport_;
  ForwarderConfig cfg_;
  mutable std::mutex slot_mu_;
  Slot slot_;
  mutable std::mutex stats_mu_;
  ForwarderStats stats_;
  Clock::time_point retry_at_{};
  std::chrono::milliseconds backoff_{0};
  std::atomic<bool> running_{false};
  std::thread worker_;
  std::mutex wake_mu_;
  std::condition_variable wake_;
};

struct ObuStats {
  std::uint64_t decoded = 0;
  std::map<Errc, std::uint64_t> errors;
};

/// Vehicle-side receive loop: decodes every datagram and hands it on.
class ObuDecoder {
 public:
  /// on_message receives the decoded message and the wall-clock decode completion time (ms).
  using Handler = std::function<void(const PerceptionMessage&, double decoded_at_ms)>;

  ObuDecoder(std::shared_ptr<Receiver> rx, Handler on_message,
             std::function<double()> clock = system_clock_ms_precise);
  ~ObuDecoder();
  ObuDecoder(const ObuDecoder&) = delete;
  ObuDecoder& operator=(const ObuDecoder&) = delete;

  void start();
  void stop();
  /// Processes at most one datagram; returns false on timeout.
  bool poll(std::chrono::milliseconds timeout);
  ObuStats stats() const;

 private:
  std::shared_ptr<Receiver> rx_;
  Handler on_message_;
  std::function<double()> clock_;
  mutable std::mutex mu_;
  ObuStats stats_;
  std::atomic<bool> running_{false};
  std::thread worker_;
};

}  // namespace msight
