#pragma once

// Chat-completions access to vision and text backends: HTTP transport, a
// deterministic mock, a content-addressed on-disk cache and bounded retries.

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "vlu/semantics.hpp"

namespace vlu {

using json = nlohmann::json;

struct GenerationParams {
  double temperature = 1.0;
  double top_p = 1.0;
  std::optional<int> top_k;
  std::optional<double> repetition_penalty;
  int max_new_tokens = 32;
  bool do_sample = true;

  /// Temperature actually sent; 0 when sampling is disabled.
  double effective_temperature() const { return do_sample ? temperature : 0.0; }
  void validate() const;
  friend bool operator==(const GenerationParams&, const GenerationParams&) = default;
};

/// Named presets: "qwen2vl", "internvl2", "llava15", "llavanext", "qwen2.5" (helper LLM), "default".
GenerationParams profile_params(std::string_view profile);
/// Maps a model id to a preset name; "auto" resolves from the id, anything else is returned as is.
std::string resolve_profile(std::string_view profile, std::string_view model_id);

struct ImagePart {
  std::string media_type;
  std::string bytes;
  friend bool operator==(const ImagePart&, const ImagePart&) = default;
};
using ContentPart = std::variant<std::string, ImagePart>;

struct ChatMessage {
  std::string role;
  std::vector<ContentPart> parts;

  static ChatMessage text(std::string role, std::string text);
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  GenerationParams params;

  /// Throws ConfigError unless messages are non-empty and hold at most one image.
  void validate() const;
  /// Concatenated text parts of the last user message.
  std::string last_user_text() const;
  /// Concatenated text of all messages, newline separated.
  std::string all_text() const;
  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

/// POST body for /v1/chat/completions.
json to_wire_json(const ChatRequest& req);
/// Hex digest of model id and messages only (parameters and sample index excluded).
std::string request_fingerprint(const ChatRequest& req);

/// One transport attempt; no retries, no caching.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Throws TransientError (retryable), AuthError or ProtocolError.
  virtual std::string send(const ChatRequest& req, int sample_index) = 0;
  virtual std::string url() const = 0;
};

struct HttpBackendOptions {
  std::string base_url = "http://localhost:8000";
  std::string api_key;
  std::chrono::seconds timeout{120};
};

class HttpBackend final : public ChatBackend {
 public:
  explicit HttpBackend(HttpBackendOptions options);
  std::string send(const ChatRequest& req, int sample_index) override;
  std::string url() const override { return options_.base_url; }

  /// Extracts choices[0].message.content, throwing ProtocolError when absent.
  static std::string parse_response(std::string_view body);

 private:
  HttpBackendOptions options_;
  std::string origin_;
  std::string path_;
};

/// One mock rule. Exactly one matcher (fingerprint, regex or wildcard) and one
/// response source (response, sequence, pool, echo or error).
struct MockRule {
  enum class Match { wildcard, regex, fingerprint };
  enum class Error { none, transient, unavailable, auth, protocol };

  Match match = Match::wildcard;
  std::string pattern;
  std::optional<std::string> model;
  /// "user" matches the last user message, "all" the whole conversation.
  std::string target = "user";

  std::optional<std::string> response;
  std::vector<std::string> sequence;
  std::vector<std::pair<std::string, double>> pool;
  double pool_min_temperature = 0.0;
  bool echo = false;
  Error error = Error::none;
  /// For transient errors: fail this many attempts per (request, sample index), then answer.
  int fail_times = -1;

  std::regex compiled;
};

struct MockSpec {
  std::uint64_t seed = 0;
  std::vector<MockRule> rules;

  /// Throws SpecError for malformed or overlapping rules.
  static MockSpec from_json(const json& j);
  static MockSpec load(const std::filesystem::path& path);
  static MockSpec constant(std::string text);
  static MockSpec echo();
};

/// Deterministic in-process backend driven by a MockSpec.
class MockBackend final : public ChatBackend {
 public:
  explicit MockBackend(MockSpec spec, std::string url = "mock:inline");
  std::string send(const ChatRequest& req, int sample_index) override;
  std::string url() const override { return url_; }
  std::size_t calls() const { return calls_.load(); }

 private:
  const MockRule& select(const ChatRequest& req, std::size_t& index) const;

  MockSpec spec_;
  std::string url_;
  std::atomic<std::size_t> calls_{0};
  std::mutex mu_;
  std::map<std::string, int> failures_;
};

/// "mock:echo", "mock:const:<text>", "mock:<spec.json>" or an http(s) base URL.
std::shared_ptr<ChatBackend> make_backend(const std::string& url, const std::string& api_key = {});

struct CacheKey {
  std::array<std::uint8_t, 32> digest{};

  static CacheKey of(std::string_view backend_url, const ChatRequest& req, int sample_index);
  std::string hex() const;
  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

struct CacheEntry {
  std::string request_digest;
  std::string text;
  std::string created_at;
  std::string backend;
};

/// <dir>/<first two hex>/<digest>.json, written via temp file and rename.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<CacheEntry> load(const CacheKey& key) const;
  void store(const CacheKey& key, std::string_view text, std::string_view backend) const;
  std::size_t entry_count() const;
  std::size_t clear() const;
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(const CacheKey& key) const;

 private:
  std::filesystem::path dir_;
};

struct ClientOptions {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{500};
  int max_in_flight = 4;
};

/// Thread-safe front end: cache lookup, bounded concurrency, retry with exponential backoff.
class ModelClient {
 public:
  ModelClient(std::shared_ptr<ChatBackend> backend, std::shared_ptr<ResponseCache> cache = nullptr,
              ClientOptions options = {});

  /// Throws BackendUnavailable after the last transient failure; AuthError and ProtocolError pass through.
  AnswerSample complete(const ChatRequest& req, int sample_index);

  std::string backend_id(std::string_view model_id) const;
  std::size_t network_calls() const { return network_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }
  const ChatBackend& backend() const { return *backend_; }

 private:
  std::shared_ptr<ChatBackend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  ClientOptions options_;
  std::counting_semaphore<1024> in_flight_;
  std::atomic<std::size_t> network_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

}  // namespace vlu
