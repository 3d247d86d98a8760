#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace msight {

struct CloudEnvelope {
  std::string topic;
  std::uint64_t received_ts_ms = 0;
  std::string source;
  std::string content_type;
  std::string payload;  // opaque bytes

  friend bool operator==(const CloudEnvelope&, const CloudEnvelope&) = default;
};

/// Nonempty and made of [a-z0-9_.].
bool valid_topic(std::string_view topic);

/// Exact topic, or a prefix ending in '.'. Throws InvalidFilter.
void validate_filter(std::string_view filter);
bool filter_matches(std::string_view filter, std::string_view topic);

/// Bounded FIFO with drop-oldest overflow. One consumer.
class Subscription {
 public:
  Subscription(std::string filter, std::size_t capacity);

  const std::string& filter() const { return filter_; }
  std::size_t capacity() const { return capacity_; }
  bool matches(std::string_view topic) const { return filter_matches(filter_, topic); }

  /// Waits up to timeout; nullopt on timeout or once closed and drained.
  std::optional<CloudEnvelope> pop(std::chrono::milliseconds timeout);
  std::optional<CloudEnvelope> try_pop();
  std::size_t size() const;
  std::uint64_t dropped() const;
  std::uint64_t received() const;
  bool closed() const;

 private:
  friend class Dispatcher;
  /// Returns true when an older entry was dropped to make room.
  bool push(const CloudEnvelope& env);
  void close(bool discard);

  std::string filter_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<CloudEnvelope> queue_;
  std::uint64_t dropped_ = 0;
  std::uint64_t received_ = 0;
  bool closed_ = false;
};

struct DeliveryReport {
  std::size_t delivered = 0;
  std::size_t dropped = 0;
};

/// Fan-out dispatcher: every matching subscription gets its own copy.
class Dispatcher {
 public:
  /// Throws InvalidFilter, or InvalidArgument for capacity 0.
  std::shared_ptr<Subscription> subscribe(const std::string& filter, std::size_t capacity = 1024);
  /// discard = true drops what is still queued; otherwise the consumer may drain it.
  void unsubscribe(const std::shared_ptr<Subscription>& sub, bool discard = false);

  /// Throws InvalidTopic. Never blocks on consumers.
  DeliveryReport publish(const CloudEnvelope& env);

  std::size_t subscriber_count() const;
  std::uint64_t total_dropped() const;

 private:
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<Subscription>> subs_;
  std::uint64_t dropped_ = 0;
};

}  // namespace msight
