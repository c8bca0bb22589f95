#pragma once

// HTTP transport for LiveGateway (cpp-httplib). Kept out of gateway.hpp so
// replay-only translation units compile faster.

#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "ctrlcot/gateway.hpp"

namespace ctrlcot {

inline Gateway::Outcome LiveGateway::perform(const ChatRequest& req) {
  const std::string body = chat_request_payload(req).dump();
  std::string last_failure = "no attempts made";

  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(jittered_delay_ms(attempt - 1)));

    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};

    auto res = client.Post(config_.completions_path, headers, body, "application/json");
    if (!res) {
      last_failure = "transport error: " + httplib::to_string(res.error());
      continue;  // timeouts and connection failures are transient
    }
    if (res->status == 200) {
      Outcome o;
      o.response = parse_chat_response(res->body);
      o.attempts = attempt + 1;
      return o;
    }
    last_failure = "HTTP " + std::to_string(res->status);
    if (!should_retry(res->status))
      throw GatewayError("request '" + req.tag + "' failed: " + last_failure);
  }
  throw GatewayError("request '" + req.tag + "' exhausted " +
                     std::to_string(config_.max_attempts) + " attempts; last: " + last_failure);
}

}  // namespace ctrlcot
