#include "msight/forwarder.hpp"

#include "msight/error.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

namespace msight {

LoopbackLink::LoopbackLink(std::chrono::microseconds delay) : delay_(delay) {}

void LoopbackLink::send(std::string_view datagram) {
  {
    std::lock_guard lk(mu_);
    if (!online_) throw Error(Errc::EndpointUnavailable, "loopback receiver offline");
    queue_.emplace_back(Clock::now() + delay_, std::string(datagram));
  }
  cv_.notify_all();
}

std::optional<std::string> LoopbackLink::receive(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  std::unique_lock lk(mu_);
  while (true) {
    if (!queue_.empty()) {
      const auto due = queue_.front().first;
      if (Clock::now() >= due) {
        std::string out = std::move(queue_.front().second);
        queue_.pop_front();
        return out;
      }
      if (due > deadline) {
        cv_.wait_until(lk, deadline);
        if (Clock::now() >= deadline) return std::nullopt;
        continue;
      }
      cv_.wait_until(lk, due);
      continue;
    }
    if (cv_.wait_until(lk, deadline) == std::cv_status::timeout && queue_.empty()) return std::nullopt;
  }
}

void LoopbackLink::set_online(bool online) {
  std::lock_guard lk(mu_);
  online_ = online;
}

std::size_t LoopbackLink::pending() const {
  std::lock_guard lk(mu_);
  return queue_.size();
}

Endpoint parse_endpoint(std::string_view s) {
  const auto colon = s.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    throw Error(Errc::InvalidArgument, "endpoint must look like host:port");
  unsigned port = 0;
  const auto digits = s.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port == 0 || port > 65535)
    throw Error(Errc::InvalidArgument, "bad port in endpoint '" + std::string(s) + "'");
  return {std::string(s.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

namespace {

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw Error(Errc::EndpointUnavailable, "cannot resolve host " + host);
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof(addr));
  freeaddrinfo(res);
  addr.sin_port = htons(port);
  return addr;
}

}  // namespace

UdpSender::UdpSender(const Endpoint& ep) {
  const sockaddr_in addr = resolve(ep.host, ep.port);
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw Error(Errc::EndpointUnavailable, std::string("socket: ") + std::strerror(errno));
  int yes = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_BROADCAST, &yes, sizeof(yes));
  // Connected so that ICMP port-unreachable surfaces as ECONNREFUSED.
  if (::connect(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd_);
    throw Error(Errc::EndpointUnavailable, std::string("connect: ") + std::strerror(err));
  }
}

UdpSender::~UdpSender() {
  if (fd_ >= 0) ::close(fd_);
}

void UdpSender::send(std::string_view datagram) {
  const auto n = ::send(fd_, datagram.data(), datagram.size(), MSG_DONTWAIT);
  if (n < 0) throw Error(Errc::EndpointUnavailable, std::string("send: ") + std::strerror(errno));
}

UdpReceiver::UdpReceiver(std::uint16_t port, const std::string& bind_host) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw Error(Errc::IoError, std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr = resolve(bind_host, port);
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int err = errno;
    ::close(fd_);
    throw Error(Errc::IoError, std::string("bind: ") + std::strerror(err));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

UdpReceiver::~UdpReceiver() {
  if (fd_ >= 0) ::close(fd_);
}

std::optional<std::string> UdpReceiver::receive(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (r <= 0) return std::nullopt;
  std::string buf(65536, '\0');
  const auto n = ::recv(fd_, buf.data(), buf.size(), 0);
  if (n < 0) return std::nullopt;
  buf.resize(static_cast<std::size_t>(n));
  return buf;
}

RsuForwarder::RsuForwarder(std::shared_ptr<Transport> transport, ForwarderConfig cfg)
    : transport_(std::move(transport)), cfg_(cfg) {
  if (!transport_) throw Error(Errc::InvalidArgument, "forwarder needs a transport");
  if (cfg_.period.count() <= 0) throw Error(Errc::InvalidArgument, "period must be positive");
}

RsuForwarder::~RsuForwarder() { stop(); }

void RsuForwarder::publish(std::string encoded, std::uint64_t frame_id) {
  publish(std::move(encoded), frame_id, Clock::now());
}

void RsuForwarder::publish(std::string encoded, std::uint64_t frame_id, Clock::time_point now) {
  auto bytes = std::make_shared<const std::string>(std::move(encoded));
  {
    std::lock_guard lk(slot_mu_);
    slot_ = {std::move(bytes), frame_id, now};
  }
  std::lock_guard lk(stats_mu_);
  ++stats_.frames_published;
}

void RsuForwarder::tick(Clock::time_point now) {
  Slot slot;
  {
    std::lock_guard lk(slot_mu_);
    slot = slot_;
  }
  if (!slot.bytes) return;
  if (now - slot.published > cfg_.stale) {
    std::lock_guard lk(stats_mu_);
    ++stats_.stale_suppressed;
    return;
  }
  if (now < retry_at_) {
    std::lock_guard lk(stats_mu_);
    ++stats_.backoff_skips;
    return;
  }
  try {
    transport_->send(*slot.bytes);
    backoff_ = std::chrono::milliseconds(0);
    std::lock_guard lk(stats_mu_);
    ++stats_.transmissions;
    ++stats_.per_frame[slot.frame_id];
  } catch (const Error&) {
    backoff_ = backoff_.count() == 0 ? cfg_.backoff_initial : std::min(backoff_ * 2, cfg_.backoff_max);
    retry_at_ = now + backoff_;
    std::lock_guard lk(stats_mu_);
    ++stats_.send_failures;
  }
}

void RsuForwarder::start() {
  if (running_.exchange(true)) return;
  worker_ = std::thread([this] {
    auto next = Clock::now();
    std::unique_lock lk(wake_mu_);
    while (running_) {
      tick(Clock::now());
      next += cfg_.period;
      wake_.wait_until(lk, next, [this] { return !running_; });
    }
  });
}

void RsuForwarder::stop() {
  {
    std::lock_guard lk(wake_mu_);
    if (!running_.exchange(false)) return;
  }
  wake_.notify_all();
  if (worker_.joinable()) worker_.join();
}

ForwarderStats RsuForwarder::stats() const {
  std::lock_guard lk(stats_mu_);
  return stats_;
}

ObuDecoder::ObuDecoder(std::shared_ptr<Receiver> rx, Handler on_message, std::function<double()> clock)
    : rx_(std::move(rx)), on_message_(std::move(on_message)), clock_(std::move(clock)) {
  if (!rx_) throw Error(Errc::InvalidArgument, "decoder needs a receiver");
}

ObuDecoder::~ObuDecoder() { stop(); }

bool ObuDecoder::poll(std::chrono::milliseconds timeout) {
  auto datagram = rx_->receive(timeout);
  if (!datagram) return false;
  try {
    const PerceptionMessage m = decode(*datagram);
    const double at = clock_();
    {
      std::lock_guard lk(mu_);
      ++stats_.decoded;
    }
    if (on_message_) on_message_(m, at);
  } catch (const Error& e) {
    std::lock_guard lk(mu_);
    ++stats_.errors[e.code()];
  }
  return true;
}

void ObuDecoder::start() {
  if (running_.exchange(true)) return;
  worker_ = std::thread([this] {
    while (running_) poll(std::chrono::milliseconds(20));
  });
}

void ObuDecoder::stop() {
  if (!running_.exchange(false)) return;
  if (worker_.joinable()) worker_.join();
}

ObuStats ObuDecoder::stats() const {
  std::lock_guard lk(mu_);
  return stats_;
}

}  // namespace msight
