#include "featdesc/gateway.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "featdesc/error.hpp"
#include "featdesc/hash.hpp"

namespace featdesc {

std::string role_class_name(RoleClass role) {
  switch (role) {
    case RoleClass::Explainer: return "explainer";
    case RoleClass::SentenceGenerator: return "sentence_generator";
    case RoleClass::Judge: return "judge";
  }
  return "explainer";
}

namespace {

class SystemClock : public Clock {
 public:
  int64_t now_ms() override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }
  void sleep_ms(int64_t ms) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  }
};

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// evidence lines have the shape: - "token": score
struct TokenScoreLine {
  std::string token;
  double score = 0.0;
};

std::vector<TokenScoreLine> parse_token_lines(const std::string& text) {
  std::vector<TokenScoreLine> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    if (line.compare(start, 3, "- \"") != 0) continue;
    const size_t tok_begin = start + 3;
    const size_t tok_end = line.rfind("\": ");
    if (tok_end == std::string::npos || tok_end < tok_begin) continue;
    TokenScoreLine entry;
    entry.token = line.substr(tok_begin, tok_end - tok_begin);
    try {
      entry.score = std::stod(line.substr(tok_end + 3));
    } catch (...) {
      continue;
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::string top_tokens_clause(const std::string& section) {
  std::vector<TokenScoreLine> lines = parse_token_lines(section);
  // aggregate by token text; repeated activations accumulate
  std::map<std::string, double> scores;
  for (const TokenScoreLine& l : lines) scores[l.token] += l.score;
  std::vector<std::pair<std::string, double>> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::string out;
  for (size_t i = 0; i < ranked.size() && i < 3; ++i) {
    if (i) out += ", ";
    out += ranked[i].first;
  }
  return out.empty() ? "unknown" : out;
}

std::string extract_marker(const std::string& prompt, const std::string& marker) {
  const size_t at = prompt.find(marker);
  if (at == std::string::npos) return "";
  const size_t begin = at + marker.size();
  const size_t end = prompt.find("\n", begin);
  return prompt.substr(begin, end == std::string::npos ? end : end - begin);
}

std::string extract_description(const std::string& prompt) {
  const size_t at = prompt.find("Description: <<");
  if (at == std::string::npos) return "";
  const size_t begin = at + std::string("Description: <<").size();
  const size_t end = prompt.find(">>", begin);
  if (end == std::string::npos) return "";
  return prompt.substr(begin, end - begin);
}

int extract_count(const std::string& prompt, const std::string& marker) {
  const std::string raw = extract_marker(prompt, marker);
  try {
    return std::stoi(raw);
  } catch (...) {
    return 0;
  }
}

const std::vector<std::string>& activating_templates() {
  // corpus-alphabet words only (letters a..p) so the inserted content word is
  // the single out-of-pattern element
  static const std::vector<std::string> templates{
      "a calm kid held a {} plan.",
      "mom made a fine {} deal.",
      "one {} came home in good shape.",
      "he had a {} and a half.",
      "people call each {} a gem.",
      "a {} began life on a bench.",
      "mild folk admire a {} each image.",
      "base camp kept one {} in a bin.",
  };
  return templates;
}

}  // namespace

namespace mock_rules {

std::string first_content_word(const std::string& description) {
  static const std::set<std::string> stopwords{"concept", "the", "a",  "an", "of",
                                               "to",      "in",  "and", "or", "references"};
  std::string word;
  for (char c : lowercase(description) + " ") {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word += c;
    } else if (!word.empty()) {
      if (!stopwords.count(word)) return word;
      word.clear();
    }
  }
  return "idea";
}

std::string explainer_reply(const std::string& prompt) {
  // split on "### <Method>" section headers when present
  std::vector<std::string> sections;
  size_t pos = 0;
  while (true) {
    size_t next = prompt.find("### ", pos);
    if (next == std::string::npos) {
      sections.push_back(prompt.substr(pos));
      break;
    }
    if (next > pos) sections.push_back(prompt.substr(pos, next - pos));
    pos = next + 4;
  }
  std::vector<std::string> clauses;
  for (const std::string& section : sections) {
    if (parse_token_lines(section).empty()) continue;
    clauses.push_back(top_tokens_clause(section));
  }
  if (clauses.empty()) return "concept: unknown";
  std::string out = "concept: " + clauses[0];
  for (size_t i = 1; i < clauses.size(); ++i) out += " | " + clauses[i];
  return out;
}

std::string sentence_generator_reply(const std::string& prompt) {
  const std::string description = extract_description(prompt);
  const std::string word = first_content_word(description);

  const std::vector<std::string> neutral{
      "a calm official made a deal.",
      "he can bake a bean pie.",
      "folk in a mall had a chat.",
      "a kid held one pale leaf.",
      "mama made plain flap jacks.",
      "call me if a cab comes.",
      "pam kept a neat log book.",
      "a dog dug a deep hole.",
      "nice gold paint on a panel.",
      "each lab keeps a clean bench.",
      "a bell rang in the big hall.",
      "jam and bread make a meal.",
  };

  const int list_n = extract_count(prompt, "Sentences: ");
  if (list_n > 0) {
    // plain numbered list of likely-activating sentences
    std::ostringstream out;
    const auto& templates = activating_templates();
    for (int i = 0; i < list_n; ++i) {
      std::string line = templates[static_cast<size_t>(i) % templates.size()];
      line.replace(line.find("{}"), 2, word);
      out << (i + 1) << ". " << line << "\n";
    }
    return out.str();
  }

  const int n = extract_count(prompt, "Count: ");
  std::ostringstream out;
  out << "ACTIVATING:\n";
  const auto& templates = activating_templates();
  for (int i = 0; i < n; ++i) {
    std::string line = templates[static_cast<size_t>(i) % templates.size()];
    line.replace(line.find("{}"), 2, word);
    out << (i + 1) << ". " << line << "\n";
  }
  out << "NEUTRAL:\n";
  int taken = 0;
  for (size_t i = 0; i < neutral.size() && taken < n; ++i) {
    if (lowercase(neutral[i]).find(word) != std::string::npos) continue;
    out << (taken + 1) << ". " << neutral[i] << "\n";
    ++taken;
  }
  for (size_t i = 0; taken < n; ++i) {  // pool exhausted: repeat with a suffix
    out << (taken + 1) << ". " << neutral[i % neutral.size()] << "\n";
    ++taken;
  }
  return out.str();
}

std::string judge_reply(const std::string& prompt) {
  const std::string description = lowercase(extract_description(prompt));

  // keywords: description words minus stopwords
  std::vector<std::string> keywords;
  {
    static const std::set<std::string> stopwords{"concept", "the", "a", "an", "of", "to",
                                                 "in",      "and", "or"};
    std::string word;
    for (char c : description + " ") {
      if (std::isalnum(static_cast<unsigned char>(c))) {
        word += c;
      } else if (!word.empty()) {
        if (!stopwords.count(word)) keywords.push_back(word);
        word.clear();
      }
    }
  }

  std::array<std::string, 3> sets;
  for (int s = 0; s < 3; ++s) {
    const std::string header = "Set " + std::to_string(s + 1) + ":";
    const size_t begin = prompt.find(header);
    if (begin == std::string::npos) continue;
    size_t end = prompt.find("\nSet ", begin);
    if (end == std::string::npos) end = prompt.size();
    sets[static_cast<size_t>(s)] = lowercase(prompt.substr(begin, end - begin));
  }

  double best_score = -1.0;
  int best = 1;
  for (int s = 0; s < 3; ++s) {
    double score = 0.0;
    for (const std::string& kw : keywords) {
      size_t pos = 0;
      while ((pos = sets[static_cast<size_t>(s)].find(kw, pos)) != std::string::npos) {
        score += 1.0;
        pos += kw.size();
      }
    }
    if (score > best_score) {
      best_score = score;
      best = s + 1;
    }
  }
  return std::to_string(best);
}

}  // namespace mock_rules

std::shared_ptr<Clock> system_clock() { return std::make_shared<SystemClock>(); }

RateLimiter::RateLimiter(int per_minute, std::shared_ptr<Clock> clock)
    : per_minute_(per_minute), clock_(std::move(clock)) {}

void RateLimiter::acquire() {
  if (per_minute_ <= 0) return;
  std::unique_lock<std::mutex> lock(mutex_);
  while (true) {
    const int64_t now = clock_->now_ms();
    while (!timestamps_.empty() && timestamps_.front() <= now - 60000) timestamps_.pop_front();
    if (static_cast<int>(timestamps_.size()) < per_minute_) {
      timestamps_.push_back(now);
      return;
    }
    const int64_t wait = timestamps_.front() + 60000 - now;
    lock.unlock();
    clock_->sleep_ms(std::max<int64_t>(wait, 1));
    lock.lock();
  }
}

Gateway::Gateway(GatewayConfig config, std::shared_ptr<Clock> clock, Transport transport)
    : config_(std::move(config)),
      clock_(clock ? std::move(clock) : system_clock()),
      transport_(std::move(transport)),
      limiter_(config_.rate_limit_per_minute, clock_) {
  if (config_.backend != "mock" && config_.backend != "http") {
    raise(ErrorCode::ConfigError, "unknown gateway backend '" + config_.backend + "'");
  }
  if (config_.backend == "http" && !transport_) {
    transport_ = http_transport();
  }
  if (!config_.cache_dir.empty()) {
    std::filesystem::create_directories(config_.cache_dir);
  }
}

const RoleEndpoint& Gateway::endpoint(RoleClass role) const {
  switch (role) {
    case RoleClass::Explainer: return config_.explainer;
    case RoleClass::SentenceGenerator: return config_.sentence_generator;
    case RoleClass::Judge: return config_.judge;
  }
  return config_.explainer;
}

std::string Gateway::role_model(RoleClass role) const {
  if (config_.backend == "mock") return "mock/" + role_class_name(role);
  return endpoint(role).model;
}

std::string Gateway::request_json(const ChatRequest& request) const {
  nlohmann::json j;
  j["role_class"] = role_class_name(request.role_class);
  j["model"] = role_model(request.role_class);
  nlohmann::json msgs = nlohmann::json::array();
  for (const ChatMessage& m : request.messages) {
    msgs.push_back({{"role", m.role}, {"content", m.content}});
  }
  j["messages"] = msgs;
  j["temperature"] = request.decoding.temperature;
  j["max_tokens"] = request.decoding.max_tokens;
  return j.dump();
}

std::string Gateway::request_hash(const ChatRequest& request) const {
  return hex64(fnv1a64(request_json(request)));
}

std::string Gateway::cache_file(const std::string& key) const {
  return (std::filesystem::path(config_.cache_dir) / (key + ".json")).string();
}

bool Gateway::load_cached(const std::string& key, const std::string& request_json_str,
                          std::string* out) {
  {
    auto it = memory_cache_.find(key);
    if (it != memory_cache_.end()) {
      *out = it->second;
      return true;
    }
  }
  if (config_.cache_dir.empty()) return false;
  std::ifstream in(cache_file(key));
  if (!in) return false;
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) return false;
  // a hash collision or stale entry must not serve a wrong response
  if (j.value("request", "") != request_json_str) return false;
  *out = j.value("response", "");
  memory_cache_[key] = *out;
  return true;
}

void Gateway::store_cached(const std::string& key, const std::string& request_json_str,
                           const std::string& response) {
  memory_cache_[key] = response;
  if (config_.cache_dir.empty()) return;
  nlohmann::json j{{"request", request_json_str},
                   {"response", response},
                   {"timestamp_ms", clock_->now_ms()}};
  std::ofstream out(cache_file(key), std::ios::trunc);
  out << j.dump() << "\n";
}

std::string Gateway::complete(const ChatRequest& request) {
  if (request.messages.empty()) {
    raise(ErrorCode::Precondition, "chat request has no messages");
  }
  for (const ChatMessage& m : request.messages) {
    if (m.content.empty()) raise(ErrorCode::Precondition, "chat message content is empty");
  }
  if (config_.backend == "http") {
    const RoleEndpoint& ep = endpoint(request.role_class);
    if (ep.url.empty()) {
      raise(ErrorCode::ConfigError,
            "no endpoint configured for role " + role_class_name(request.role_class));
    }
    if (!ep.api_key_env.empty() && std::getenv(ep.api_key_env.c_str()) == nullptr) {
      raise(ErrorCode::ConfigError,
            "environment variable '" + ep.api_key_env + "' is not set");
    }
  }

  const std::string req_json = request_json(request);
  const std::string key = hex64(fnv1a64(req_json));

  std::shared_future<std::string> future;
  {
    std::unique_lock<std::mutex> lock(mutex_);
    std::string cached;
    if (load_cached(key, req_json, &cached)) {
      cache_hits_.fetch_add(1);
      return cached;
    }
    auto it = in_flight_.find(key);
    if (it != in_flight_.end()) {
      // an identical request is already on the wire; share its result
      future = it->second;
    } else {
      std::promise<std::string> promise;
      future = promise.get_future().share();
      in_flight_[key] = future;
      lock.unlock();
      try {
        std::string response = perform(request);
        lock.lock();
        store_cached(key, req_json, response);
        in_flight_.erase(key);
        lock.unlock();
        promise.set_value(response);
      } catch (...) {
        lock.lock();
        in_flight_.erase(key);
        lock.unlock();
        promise.set_exception(std::current_exception());
      }
    }
  }
  return future.get();
}

std::string Gateway::perform(const ChatRequest& request) {
  if (config_.backend == "mock") return mock_response(request);

  const RoleEndpoint& ep = endpoint(request.role_class);
  nlohmann::json body;
  body["model"] = ep.model;
  nlohmann::json msgs = nlohmann::json::array();
  for (const ChatMessage& m : request.messages) {
    msgs.push_back({{"role", m.role}, {"content", m.content}});
  }
  body["messages"] = msgs;
  body["temperature"] = request.decoding.temperature;
  body["max_tokens"] = request.decoding.max_tokens;
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt < std::max(1, config_.retry_max_attempts); ++attempt) {
    if (attempt > 0) {
      clock_->sleep_ms(static_cast<int64_t>(config_.retry_backoff_ms) * (1ll << (attempt - 1)));
    }
    limiter_.acquire();
    transport_calls_.fetch_add(1);
    try {
      const std::string response_body = transport_(ep, payload);
      nlohmann::json j = nlohmann::json::parse(response_body, nullptr, false);
      if (j.is_discarded()) {
        raise(ErrorCode::ParseError, "endpoint returned a non-JSON body");
      }
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::RequestError) throw;  // 4xx never retries
      last_error = e.what();
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  raise(ErrorCode::TransportError,
        "request failed after " + std::to_string(config_.retry_max_attempts) +
            " attempts; last error: " + last_error);
}

std::string Gateway::mock_response(const ChatRequest& request) const {
  std::string prompt;
  for (const ChatMessage& m : request.messages) {
    if (!prompt.empty()) prompt += "\n";
    prompt += m.content;
  }
  switch (request.role_class) {
    case RoleClass::Explainer:
      return mock_rules::explainer_reply(prompt);
    case RoleClass::SentenceGenerator:
      return mock_rules::sentence_generator_reply(prompt);
    case RoleClass::Judge:
      if (config_.mock_judge_policy == MockJudgePolicy::Random) {
        const uint64_t h = fnv1a64_mix(fnv1a64(prompt), config_.mock_seed);
        return std::to_string(1 + h % 3);
      }
      return mock_rules::judge_reply(prompt);
  }
  return "";
}

}  // namespace featdesc
