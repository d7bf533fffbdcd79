#pragma once

#include <chrono>
#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "deskagent/observer/messages.hpp"

namespace deskagent::obs {

class RemoteError : public ObserverError {
 public:
  using ObserverError::ObserverError;
};

class RemoteTimeout : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

struct RemoteConfig {
  std::string endpoint;  // scheme://host:port
  double timeout_s = 120.0;
  std::string api_key_env = "DESKAGENT_API_KEY";
};

// JSON-over-HTTP client: POST /v1/query with the request, reply is the verdict body.
class RemoteObserver : public Observer {
 public:
  explicit RemoteObserver(RemoteConfig cfg) : cfg_(std::move(cfg)), client_(cfg_.endpoint) {
    if (!client_.is_valid()) throw RemoteError("invalid endpoint '" + cfg_.endpoint + "'");
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
    client_.set_connection_timeout(secs, usecs);
    client_.set_read_timeout(secs, usecs);
    client_.set_write_timeout(secs, usecs);
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) client_.set_bearer_token_auth(key);
  }

  std::string name() const override { return "remote"; }

  ObserverVerdict query(const ObserverRequest& req) override {
    req.validate();
    const std::string body = request_to_json(req).dump();
    const auto t0 = std::chrono::steady_clock::now();
    auto res = client_.Post("/v1/query", body, "application/json");
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read && ms >= cfg_.timeout_s * 1000.0 * 0.95)
        throw RemoteTimeout("no reply from " + cfg_.endpoint + " within " + std::to_string(cfg_.timeout_s) + " s");
      throw RemoteError("request to " + cfg_.endpoint + " failed: " + httplib::to_string(err));
    }
    if (res->status != 200)
      throw RemoteError("endpoint " + cfg_.endpoint + " answered HTTP " + std::to_string(res->status));
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError("<root>", std::string("reply is not JSON: ") + e.what());
    }
    auto v = verdict_from_json(req.kind, reply);
    v.cost.latency_ms = ms;
    return v;
  }

 private:
  RemoteConfig cfg_;
  httplib::Client client_;
};

}  // namespace deskagent::obs
