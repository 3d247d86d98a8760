#pragma once

#include "msight/pubsub.hpp"
#include "msight/storage.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace msight {

inline constexpr std::size_t kDefaultMaxBodyBytes = 4u << 20;
inline constexpr const char* kTokenHeader = "X-MSight-Token";

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::string token;
  std::size_t max_body_bytes = kDefaultMaxBodyBytes;
};

struct GatewayStats {
  std::uint64_t accepted = 0;
  std::uint64_t unauthorized = 0;
  std::uint64_t too_large = 0;
  std::uint64_t storage_failures = 0;
  std::uint64_t bad_topic = 0;
};

/// HTTP ingestion endpoint: POST /ingest/<topic>, GET /healthz.
/// Each accepted body is appended to storage first and only then published,
/// so a 200 always means the envelope is on the durable path.
class Gateway {
 public:
  Gateway(GatewayConfig cfg, Dispatcher& dispatcher, StorageSink& storage,
          std::function<std::uint64_t()> clock = nullptr);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds and serves on a background thread. Throws EndpointUnavailable if binding fails.
  void start();
  void stop();
  int port() const { return port_; }
  GatewayStats stats() const;

 private:
  GatewayConfig cfg_;
  Dispatcher& dispatcher_;
  StorageSink& storage_;
  std::function<std::uint64_t()> clock_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::uint64_t> accepted_{0}, unauthorized_{0}, too_large_{0}, storage_failures_{0}, bad_topic_{0};
};

}  // namespace msight
