#pragma once

// Chat-completion gateway: one blocking `complete` call over either a live
// OpenAI-compatible HTTP endpoint or a deterministic replay file, plus a
// positionally-aligned `complete_batch` with a hard bound on in-flight
// requests.
//
// Replay fixtures are JSONL rows of
//   {"key", "response_text", "completion_tokens", "finish_reason"}
// keyed by a stable hash of (tag, canonicalized messages). Live-call logs use
// the same row shape (plus "tag" and "attempts"), so a logged live run can be
// replayed as-is.

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcot/common.hpp"

namespace ctrlcot {

constexpr const char* kCredentialEnvVar = "CTRLCOT_API_KEY";

struct GatewayError : Error {
  explicit GatewayError(const std::string& msg) : Error("gateway: " + msg) {}
};

// ----------------------------------------------------------------------------
// Request / response types
// ----------------------------------------------------------------------------

struct ChatMessage {
  enum class Role { system, user, assistant };
  Role role = Role::user;
  std::string content;
};

inline std::string to_string(ChatMessage::Role r) {
  switch (r) {
    case ChatMessage::Role::system: return "system";
    case ChatMessage::Role::user: return "user";
    case ChatMessage::Role::assistant: return "assistant";
  }
  throw Error("invalid role");
}

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  std::optional<int> max_tokens;
  double temperature = 0.0;
  std::optional<std::int64_t> seed;
  std::string tag;  // stage + problem id; identifies the call in logs and replay

  void validate() const {
    if (messages.empty()) throw GatewayError("request '" + tag + "' has no messages");
    if (messages.front().role == ChatMessage::Role::assistant)
      throw GatewayError("request '" + tag + "' must start with a system or user message");
  }
};

/// Convenience constructor for the common single-user-message request.
inline ChatRequest user_request(std::string model, std::string prompt, std::string tag,
                                double temperature = 0.0,
                                std::optional<int> max_tokens = std::nullopt) {
  ChatRequest req;
  req.model = std::move(model);
  req.messages.push_back({ChatMessage::Role::user, std::move(prompt)});
  req.tag = std::move(tag);
  req.temperature = temperature;
  req.max_tokens = max_tokens;
  return req;
}

struct FinishReason {
  enum class Kind { stop, length, error };
  Kind kind = Kind::stop;
  std::string detail;  // populated for Kind::error

  static FinishReason stop() { return {Kind::stop, ""}; }
  static FinishReason length() { return {Kind::length, ""}; }
  static FinishReason error(std::string detail) { return {Kind::error, std::move(detail)}; }

  std::string name() const {
    switch (kind) {
      case Kind::stop: return "stop";
      case Kind::length: return "length";
      case Kind::error: return "error";
    }
    throw Error("invalid finish reason");
  }

  static FinishReason parse(const std::string& s) {
    if (s == "stop" || s.empty()) return stop();
    if (s == "length") return length();
    if (s.rfind("error", 0) == 0) {
      const auto colon = s.find(':');
      return error(colon == std::string::npos ? "recorded error" : trim(s.substr(colon + 1)));
    }
    // Providers report other reasons (content_filter, ...); fold into error.
    return error(s);
  }
};

struct ChatResponse {
  std::string text;
  std::size_t completion_token_count = 0;  // as reported by the endpoint, 0 if absent
  FinishReason finish_reason;

  bool ok() const { return finish_reason.kind != FinishReason::Kind::error; }
};

// ----------------------------------------------------------------------------
// Replay keys
// ----------------------------------------------------------------------------

/// Stable identity of a call: hash of the tag and the canonical JSON form of
/// the messages. Model name and sampling knobs are deliberately excluded —
/// the prompt is the identity.
inline std::string replay_key(const std::string& tag,
                              const std::vector<ChatMessage>& messages) {
  nlohmann::json canon = nlohmann::json::array();
  for (const auto& m : messages)
    canon.push_back({{"content", m.content}, {"role", to_string(m.role)}});
  return to_hex(fnv1a64(tag + '\x1f' + canon.dump()));
}

// ----------------------------------------------------------------------------
// Gateway base
// ----------------------------------------------------------------------------

class Gateway {
 public:
  virtual ~Gateway() = default;

  /// Blocking, thread-safe. Throws GatewayError when the backend cannot
  /// produce a response (retries exhausted, malformed reply) and
  /// ReplayMissError when a replay fixture has no recording.
  ChatResponse complete(const ChatRequest& req) {
    req.validate();
    const Outcome outcome = perform(req);
    log_entry(req, outcome);
    return outcome.response;
  }

  /// Runs `reqs` with at most `max_in_flight` outstanding at once. Responses
  /// are positionally aligned with requests; a failing request becomes
  /// finish_reason=error instead of aborting the batch. Replay misses are the
  /// exception: they indicate a broken fixture and abort loudly.
  std::vector<ChatResponse> complete_batch(const std::vector<ChatRequest>& reqs,
                                           std::size_t max_in_flight) {
    if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    for (const auto& r : reqs) r.validate();

    std::vector<Outcome> outcomes(reqs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> aborted{false};
    std::exception_ptr miss;
    std::mutex miss_mutex;

    const auto worker = [&] {
      while (!aborted.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= reqs.size()) return;
        try {
          outcomes[i] = perform(reqs[i]);
        } catch (const ReplayMissError&) {
          std::lock_guard<std::mutex> lock(miss_mutex);
          if (!miss) miss = std::current_exception();
          aborted.store(true);
          return;
        } catch (const std::exception& e) {
          outcomes[i].response.finish_reason = FinishReason::error(e.what());
        }
      }
    };

    const std::size_t n_workers = std::min(max_in_flight, std::max<std::size_t>(reqs.size(), 1));
    std::vector<std::thread> workers;
    workers.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) workers.emplace_back(worker);
    for (auto& w : workers) w.join();
    if (miss) std::rethrow_exception(miss);

    std::vector<ChatResponse> out;
    out.reserve(reqs.size());
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      log_entry(reqs[i], outcomes[i]);  // ordered, deterministic log
      out.push_back(outcomes[i].response);
    }
    return out;
  }

  /// Enable JSONL call logging; rows double as replay-fixture rows.
  void set_log_path(const std::string& path) {
    std::lock_guard<std::mutex> lock(log_mutex_);
    log_path_ = path;
    if (!path.empty()) write_file(path, "");  // truncate
  }

 protected:
  struct Outcome {
    ChatResponse response;
    int attempts = 1;
  };

  virtual Outcome perform(const ChatRequest& req) = 0;

 private:
  void log_entry(const ChatRequest& req, const Outcome& outcome) {
    std::lock_guard<std::mutex> lock(log_mutex_);
    if (log_path_.empty()) return;
    nlohmann::json row{{"key", replay_key(req.tag, req.messages)},
                       {"tag", req.tag},
                       {"attempts", outcome.attempts},
                       {"response_text", outcome.response.text},
                       {"completion_tokens", outcome.response.completion_token_count},
                       {"finish_reason", outcome.response.finish_reason.name()}};
    std::ofstream out(log_path_, std::ios::binary | std::ios::app);
    out << row.dump() << '\n';
  }

  std::string log_path_;
  std::mutex log_mutex_;
};

// ----------------------------------------------------------------------------
// Replay backend
// ----------------------------------------------------------------------------

class ReplayGateway final : public Gateway {
 public:
  explicit ReplayGateway(const std::string& fixture_path) : path_(fixture_path) {
    const std::string content = read_file(fixture_path);
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(fixture_path, line_no, std::string("bad fixture row: ") + e.what());
      }
      Entry e;
      e.text = j.at("response_text").get<std::string>();
      e.completion_tokens = j.value("completion_tokens", std::size_t{0});
      e.finish = FinishReason::parse(j.value("finish_reason", std::string("stop")));
      entries_[j.at("key").get<std::string>()] = std::move(e);
    }
  }

  std::size_t size() const { return entries_.size(); }

 protected:
  Outcome perform(const ChatRequest& req) override {
    const std::string key = replay_key(req.tag, req.messages);
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ReplayMissError(req.tag, key);
    Outcome o;
    o.response.text = it->second.text;
    o.response.completion_token_count = it->second.completion_tokens;
    o.response.finish_reason = it->second.finish;
    return o;
  }

 private:
  struct Entry {
    std::string text;
    std::size_t completion_tokens = 0;
    FinishReason finish;
  };
  std::string path_;
  std::unordered_map<std::string, Entry> entries_;
};

// ----------------------------------------------------------------------------
// Live backend
// ----------------------------------------------------------------------------

struct LiveGatewayConfig {
  std::string base_url;                 // e.g. "http://localhost:8000"
  std::string completions_path = "/v1/chat/completions";
  int max_attempts = 5;                 // total tries per request
  int backoff_base_ms = 1000;           // delay = base * 2^k, plus jitter
  double backoff_jitter = 0.1;          // uniform extra fraction of the delay
  int timeout_seconds = 120;
};

class LiveGateway final : public Gateway {
 public:
  explicit LiveGateway(LiveGatewayConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ConfigError("live backend needs an endpoint URL");
    const char* key = std::getenv(kCredentialEnvVar);
    if (!key || std::string(key).empty())
      throw ConfigError(std::string("live backend needs credential env var ") +
                        kCredentialEnvVar);
    api_key_ = key;
  }

 protected:
  Outcome perform(const ChatRequest& req) override;

 private:
  bool should_retry(int status) const { return status == 429 || status >= 500; }

  int jittered_delay_ms(int attempt) {
    const double base = static_cast<double>(config_.backoff_base_ms) * std::pow(2.0, attempt);
    std::uniform_real_distribution<double> extra(0.0, config_.backoff_jitter);
    double factor;
    {
      std::lock_guard<std::mutex> lock(rng_mutex_);
      factor = 1.0 + extra(rng_);
    }
    return static_cast<int>(base * factor);
  }

  LiveGatewayConfig config_;
  std::string api_key_;
  std::mt19937 rng_{std::random_device{}()};
  std::mutex rng_mutex_;
};

/// Build the chat-completions wire payload for a request.
inline nlohmann::json chat_request_payload(const ChatRequest& req) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : req.messages)
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  nlohmann::json payload{{"model", req.model},
                         {"messages", messages},
                         {"temperature", req.temperature}};
  if (req.max_tokens) payload["max_tokens"] = *req.max_tokens;
  if (req.seed) payload["seed"] = *req.seed;
  return payload;
}

/// Parse a chat-completions response body into a ChatResponse.
inline ChatResponse parse_chat_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw GatewayError(std::string("malformed endpoint response: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw GatewayError("malformed endpoint response: no choices");
  const auto& choice = j["choices"][0];
  if (!choice.contains("message") || !choice["message"].contains("content"))
    throw GatewayError("malformed endpoint response: no message content");
  ChatResponse r;
  r.text = choice["message"]["content"].get<std::string>();
  r.finish_reason = FinishReason::parse(choice.value("finish_reason", std::string("stop")));
  if (j.contains("usage") && j["usage"].contains("completion_tokens") &&
      j["usage"]["completion_tokens"].is_number())
    r.completion_token_count = j["usage"]["completion_tokens"].get<std::size_t>();
  return r;
}

}  // namespace ctrlcot

// The httplib-dependent part lives in a separate header so that translation
// units which only need the replay backend or the types avoid the heavy
// include; gateway_http.hpp must be included wherever LiveGateway is used.
