#include "msight/pubsub.hpp"

#include "msight/error.hpp"

#include <algorithm>

namespace msight {

bool valid_topic(std::string_view topic) {
  if (topic.empty()) return false;
  return std::all_of(topic.begin(), topic.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
  });
}

void validate_filter(std::string_view filter) {
  if (!valid_topic(filter)) throw Error(Errc::InvalidFilter, "filter '" + std::string(filter) + "' is not a topic or prefix");
  if (filter == ".") throw Error(Errc::InvalidFilter, "filter '.' names no prefix");
}

bool filter_matches(std::string_view filter, std::string_view topic) {
  if (!filter.empty() && filter.back() == '.') return topic.size() > filter.size() && topic.starts_with(filter);
  return topic == filter;
}

Subscription::Subscription(std::string filter, std::size_t capacity) : filter_(std::move(filter)), capacity_(capacity) {}

bool Subscription::push(const CloudEnvelope& env) {
  bool dropped = false;
  {
    std::lock_guard lk(mu_);
    if (closed_) return false;
    if (queue_.size() >= capacity_) {
      queue_.pop_front();
      ++dropped_;
      dropped = true;
    }
    queue_.push_back(env);
    ++received_;
  }
  cv_.notify_one();
  return dropped;
}

void Subscription::close(bool discard) {
  {
    std::lock_guard lk(mu_);
    closed_ = true;
    if (discard) queue_.clear();
  }
  cv_.notify_all();
}

std::optional<CloudEnvelope> Subscription::pop(std::chrono::milliseconds timeout) {
  std::unique_lock lk(mu_);
  cv_.wait_for(lk, timeout, [this] { return !queue_.empty() || closed_; });
  if (queue_.empty()) return std::nullopt;
  CloudEnvelope e = std::move(queue_.front());
  queue_.pop_front();
  return e;
}

std::optional<CloudEnvelope> Subscription::try_pop() { return pop(std::chrono::milliseconds(0)); }

std::size_t Subscription::size() const {
  std::lock_guard lk(mu_);
  return queue_.size();
}

std::uint64_t Subscription::dropped() const {
  std::lock_guard lk(mu_);
  return dropped_;
}

std::uint64_t Subscription::received() const {
  std::lock_guard lk(mu_);
  return received_;
}

bool Subscription::closed() const {
  std::lock_guard lk(mu_);
  return closed_;
}

std::shared_ptr<Subscription> Dispatcher::subscribe(const std::string& filter, std::size_t capacity) {
  validate_filter(filter);
  if (capacity == 0) throw Error(Errc::InvalidArgument, "subscription capacity must be at least 1");
  auto sub = std::make_shared<Subscription>(filter, capacity);
  std::lock_guard lk(mu_);
  subs_.push_back(sub);
  return sub;
}

void Dispatcher::unsubscribe(const std::shared_ptr<Subscription>& sub, bool discard) {
  {
    std::lock_guard lk(mu_);
    subs_.erase(std::remove(subs_.begin(), subs_.end(), sub), subs_.end());
  }
  if (sub) sub->close(discard);
}

DeliveryReport Dispatcher::publish(const CloudEnvelope& env) {
  if (!valid_topic(env.topic)) throw Error(Errc::InvalidTopic, "topic '" + env.topic + "' is invalid");
  // Held across the fan-out so every subscriber sees one global publication order.
  std::lock_guard lk(mu_);
  DeliveryReport r;
  for (const auto& s : subs_) {
    if (!s->matches(env.topic)) continue;
    if (s->push(env)) ++r.dropped;
    ++r.delivered;
  }
  dropped_ += r.dropped;
  return r;
}

std::size_t Dispatcher::subscriber_count() const {
  std::lock_guard lk(mu_);
  return subs_.size();
}

std::uint64_t Dispatcher::total_dropped() const {
  std::lock_guard lk(mu_);
  return dropped_;
}

}  // namespace msight
