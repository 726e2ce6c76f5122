#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace featdesc {

enum class RoleClass { Explainer, SentenceGenerator, Judge };

std::string role_class_name(RoleClass role);

struct ChatMessage {
  std::string role;  // "system" | "user"
  std::string content;
};

struct DecodingParams {
  double temperature = 0.0;
  int max_tokens = 2048;
};

struct ChatRequest {
  RoleClass role_class = RoleClass::Explainer;
  std::vector<ChatMessage> messages;
  DecodingParams decoding;
};

struct RoleEndpoint {
  std::string url;
  std::string model;
  std::string api_key_env;
};

enum class MockJudgePolicy { Overlap, Random };

struct GatewayConfig {
  std::string backend = "mock";  // "mock" | "http"
  RoleEndpoint explainer;
  RoleEndpoint sentence_generator;
  RoleEndpoint judge;
  std::string cache_dir;  // empty: in-memory cache only
  int retry_max_attempts = 3;
  int retry_backoff_ms = 250;
  int rate_limit_per_minute = 60;
  MockJudgePolicy mock_judge_policy = MockJudgePolicy::Overlap;
  uint64_t mock_seed = 0;
};

/// Injectable clock so retry backoff and the rate limiter are testable with
/// virtual time.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual int64_t now_ms() = 0;
  virtual void sleep_ms(int64_t ms) = 0;
};

std::shared_ptr<Clock> system_clock();

/// Sliding-window limiter: at most `per_minute` acquisitions in any trailing
/// 60-second window.
class RateLimiter {
 public:
  RateLimiter(int per_minute, std::shared_ptr<Clock> clock);
  void acquire();

 private:
  int per_minute_;
  std::shared_ptr<Clock> clock_;
  std::mutex mutex_;
  std::deque<int64_t> timestamps_;
};

/// Sends a serialized chat-completion body to an endpoint and returns the
/// raw response body. Swappable in tests.
using Transport = std::function<std::string(const RoleEndpoint&, const std::string& body)>;

/// POST transport over cpp-httplib with a Bearer token taken from the
/// endpoint's api_key_env variable.
Transport http_transport();

/// Uniform access to the explainer, sentence-generator and judge models.
/// Responses are cached by request hash; concurrent identical requests
/// coalesce into one upstream call. The mock backend is deterministic,
/// needs no credentials and never touches the transport.
class Gateway {
 public:
  explicit Gateway(GatewayConfig config, std::shared_ptr<Clock> clock = nullptr,
                   Transport transport = nullptr);

  std::string complete(const ChatRequest& request);

  /// Cache key of a request (also recorded as the description prompt hash).
  std::string request_hash(const ChatRequest& request) const;

  std::string role_model(RoleClass role) const;
  const GatewayConfig& config() const { return config_; }

  uint64_t transport_calls() const { return transport_calls_.load(); }
  uint64_t cache_hits() const { return cache_hits_.load(); }

 private:
  GatewayConfig config_;
  std::shared_ptr<Clock> clock_;
  Transport transport_;
  RateLimiter limiter_;
  std::mutex mutex_;
  std::map<std::string, std::string> memory_cache_;
  std::map<std::string, std::shared_future<std::string>> in_flight_;
  std::atomic<uint64_t> transport_calls_{0};
  std::atomic<uint64_t> cache_hits_{0};

  const RoleEndpoint& endpoint(RoleClass role) const;
  std::string perform(const ChatRequest& request);
  std::string mock_response(const ChatRequest& request) const;
  std::string cache_file(const std::string& key) const;
  bool load_cached(const std::string& key, const std::string& request_json, std::string* out);
  void store_cached(const std::string& key, const std::string& request_json,
                    const std::string& response);
  std::string request_json(const ChatRequest& request) const;
};

namespace mock_rules {

/// "concept: ..." built from the highest-scoring evidence tokens, one clause
/// per evidence section.
std::string explainer_reply(const std::string& prompt);

/// ACTIVATING/NEUTRAL sets embedding the description's first content word,
/// or a plain numbered list when the prompt asks for one.
std::string sentence_generator_reply(const std::string& prompt);

/// Keyword-overlap judge: scores each set by overlap with the description
/// and answers the argmax (lowest index on ties).
std::string judge_reply(const std::string& prompt);

/// First content word of a description (mock sentence generators embed it).
std::string first_content_word(const std::string& description);

}  // namespace mock_rules

}  // namespace featdesc
