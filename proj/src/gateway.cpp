#include "msight/gateway.hpp"

#include "msight/error.hpp"
#include "msight/v2x.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace msight {

Gateway::Gateway(GatewayConfig cfg, Dispatcher& dispatcher, StorageSink& storage, std::function<std::uint64_t()> clock)
    : cfg_(std::move(cfg)), dispatcher_(dispatcher), storage_(storage), clock_(std::move(clock)) {
  if (!clock_) clock_ = system_clock_ms;
}

Gateway::~Gateway() { stop(); }

void Gateway::start() {
  if (server_) return;
  server_ = std::make_unique<httplib::Server>();
  // One byte over the limit still reaches the handler check below; httplib
  // itself answers 413 for anything larger.
  server_->set_tcp_nodelay(true);
  server_->set_payload_max_length(cfg_.max_body_bytes + 1);

  server_->Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok\n", "text/plain");
  });

  server_->Post(R"(/ingest/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto reply = [&](int status, const std::string& msg) {
      res.status = status;
      res.set_content(nlohmann::json{{"status", status}, {"message", msg}}.dump(), "application/json");
    };
    if (cfg_.token.empty() || req.get_header_value(kTokenHeader) != cfg_.token) {
      ++unauthorized_;
      return reply(401, "missing or wrong token");
    }
    if (req.body.size() > cfg_.max_body_bytes) {
      ++too_large_;
      return reply(413, "body exceeds " + std::to_string(cfg_.max_body_bytes) + " bytes");
    }
    CloudEnvelope env;
    env.topic = req.matches[1];
    if (!valid_topic(env.topic)) {
      ++bad_topic_;
      return reply(400, "invalid topic");
    }
    env.received_ts_ms = clock_();
    env.source = req.has_header("X-MSight-Source") ? req.get_header_value("X-MSight-Source") : req.remote_addr;
    env.content_type = req.get_header_value("Content-Type");
    env.payload = req.body;
    try {
      storage_.append(env);
    } catch (const Error& e) {
      ++storage_failures_;
      return reply(503, e.what());
    }
    const DeliveryReport d = dispatcher_.publish(env);
    ++accepted_;
    res.status = 200;
    res.set_content(nlohmann::json{{"status", 200}, {"delivered", d.delivered}, {"dropped", d.dropped}}.dump(),
                    "application/json");
  });

  server_->set_error_handler([this](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) ++too_large_;
  });

  port_ = cfg_.port == 0 ? server_->bind_to_any_port(cfg_.host) : (server_->bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
  if (port_ <= 0) {
    server_.reset();
    throw Error(Errc::EndpointUnavailable, "cannot bind gateway to " + cfg_.host + ":" + std::to_string(cfg_.port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void Gateway::stop() {
  if (!server_) return;
  server_->stop();
  if (thread_.joinable()) thread_.join();
  server_.reset();
}

GatewayStats Gateway::stats() const {
  return {accepted_.load(), unauthorized_.load(), too_large_.load(), storage_failures_.load(), bad_topic_.load()};
}

}  // namespace msight
