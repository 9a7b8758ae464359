#include "vlu/model_client.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <thread>
#include <tuple>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "vlu/errors.hpp"
#include "vlu/random.hpp"
#include "vlu/util.hpp"

namespace vlu {

void GenerationParams::validate() const {
  if (!std::isfinite(temperature) || temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
  if (top_k && *top_k < 1) throw ConfigError("top_k must be positive");
  if (repetition_penalty && !(*repetition_penalty >= 1.0)) throw ConfigError("repetition_penalty must be >= 1");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be positive");
}

GenerationParams profile_params(std::string_view profile) {
  GenerationParams p;
  p.temperature = 0.1;
  p.max_new_tokens = 32;
  if (profile == "default" || profile == "internvl2" || profile == "llava15" || profile == "llavanext") return p;
  if (profile == "qwen2vl") {
    p.top_k = 50;
    p.top_p = 0.95;
    p.repetition_penalty = 1.05;
    return p;
  }
  if (profile == "qwen2.5") {
    p.top_p = 0.8;
    p.repetition_penalty = 1.05;
    p.max_new_tokens = 256;
    return p;
  }
  throw ConfigError("unknown parameter profile '" + std::string(profile) + "'");
}

std::string resolve_profile(std::string_view profile, std::string_view model_id) {
  if (profile != "auto") {
    profile_params(profile);
    return std::string(profile);
  }
  std::string m(model_id);
  std::transform(m.begin(), m.end(), m.begin(), [](unsigned char c) { return std::tolower(c); });
  auto has = [&](std::string_view s) { return m.find(s) != std::string::npos; };
  if (has("qwen2-vl") || has("qwen2vl")) return "qwen2vl";
  if (has("internvl2")) return "internvl2";
  if (has("llava-v1.6") || has("llava-next") || has("llavanext")) return "llavanext";
  if (has("llava-1.5") || has("llava1.5")) return "llava15";
  if (has("qwen2.5")) return "qwen2.5";
  return "default";
}

ChatMessage ChatMessage::text(std::string role, std::string text) {
  return ChatMessage{std::move(role), {ContentPart{std::move(text)}}};
}

void ChatRequest::validate() const {
  if (messages.empty()) throw ConfigError("chat request has no messages");
  int images = 0;
  for (const auto& m : messages) {
    for (const auto& part : m.parts) images += std::holds_alternative<ImagePart>(part) ? 1 : 0;
  }
  if (images > 1) throw ConfigError("chat request carries more than one image");
}

namespace {

std::string join_text(const ChatMessage& m) {
  std::string out;
  for (const auto& part : m.parts) {
    if (const auto* t = std::get_if<std::string>(&part)) {
      if (!out.empty()) out.push_back('\n');
      out += *t;
    }
  }
  return out;
}

}  // namespace

std::string ChatRequest::last_user_text() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == "user") return join_text(*it);
  }
  return {};
}

std::string ChatRequest::all_text() const {
  std::string out;
  for (const auto& m : messages) {
    if (!out.empty()) out.push_back('\n');
    out += join_text(m);
  }
  return out;
}

namespace {

json messages_json(const ChatRequest& req) {
  json messages = json::array();
  for (const auto& m : req.messages) {
    json content;
    if (m.parts.size() == 1 && std::holds_alternative<std::string>(m.parts.front())) {
      content = std::get<std::string>(m.parts.front());
    } else {
      content = json::array();
      for (const auto& part : m.parts) {
        if (const auto* t = std::get_if<std::string>(&part)) {
          content.push_back({{"type", "text"}, {"text", *t}});
        } else {
          const auto& img = std::get<ImagePart>(part);
          content.push_back({{"type", "image_url"},
                             {"image_url", {{"url", "data:" + img.media_type + ";base64," + base64_encode(img.bytes)}}}});
        }
      }
    }
    messages.push_back({{"role", m.role}, {"content", std::move(content)}});
  }
  return messages;
}

}  // namespace

json to_wire_json(const ChatRequest& req) {
  json body = {{"model", req.model_id},
               {"messages", messages_json(req)},
               {"temperature", req.params.effective_temperature()},
               {"top_p", req.params.top_p},
               {"max_tokens", req.params.max_new_tokens}};
  if (req.params.top_k) body["top_k"] = *req.params.top_k;
  if (req.params.repetition_penalty) body["repetition_penalty"] = *req.params.repetition_penalty;
  return body;
}

std::string request_fingerprint(const ChatRequest& req) {
  const json j = {{"model", req.model_id}, {"messages", messages_json(req)}};
  return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// HTTP

HttpBackend::HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(options_.base_url, m, kUrl)) throw ConfigError("invalid backend URL " + options_.base_url);
  origin_ = m[1].str();
  std::string prefix = m[2].str();
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  const bool has_v1 = prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0;
  path_ = prefix + (has_v1 ? "/chat/completions" : "/v1/chat/completions");
}

std::string HttpBackend::parse_response(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw ProtocolError("response has no choices");
  }
  const json& choice = j["choices"][0];
  if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) {
    throw ProtocolError("choice has no message");
  }
  const json& content = choice["message"].value("content", json());
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string out;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text" && part.contains("text") && part["text"].is_string()) {
        out += part["text"].get<std::string>();
      }
    }
    return out;
  }
  throw ProtocolError("message content is missing");
}

std::string HttpBackend::send(const ChatRequest& req, int) {
  httplib::Client cli(origin_);
  const auto t = static_cast<time_t>(options_.timeout.count());
  cli.set_connection_timeout(t);
  cli.set_read_timeout(t);
  cli.set_write_timeout(t);
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

  auto res = cli.Post(path_, headers, to_wire_json(req).dump(), "application/json");
  if (!res) throw TransientError("transport error: " + httplib::to_string(res.error()));
  const int status = res->status;
  if (status == 401 || status == 403) throw AuthError("HTTP " + std::to_string(status) + " from " + origin_);
  if (status == 429 || status >= 500) throw TransientError("HTTP " + std::to_string(status) + " from " + origin_);
  if (status < 200 || status >= 300) throw ProtocolError("HTTP " + std::to_string(status) + " from " + origin_);
  return parse_response(res->body);
}

// ---------------------------------------------------------------------------
// Mock

namespace {

MockRule::Error parse_error_kind(const std::string& s) {
  if (s == "transient") return MockRule::Error::transient;
  if (s == "unavailable") return MockRule::Error::unavailable;
  if (s == "auth") return MockRule::Error::auth;
  if (s == "protocol") return MockRule::Error::protocol;
  throw SpecError("unknown mock error kind '" + s + "'");
}

MockRule parse_rule(const json& r, std::size_t index) {
  const std::string where = "mock rule " + std::to_string(index) + ": ";
  if (!r.is_object()) throw SpecError(where + "must be an object");
  MockRule rule;
  int matchers = 0;
  if (r.contains("fingerprint")) {
    rule.match = MockRule::Match::fingerprint;
    rule.pattern = r.at("fingerprint").get<std::string>();
    ++matchers;
  }
  if (r.contains("regex")) {
    rule.match = MockRule::Match::regex;
    rule.pattern = r.at("regex").get<std::string>();
    try {
      rule.compiled = std::regex(rule.pattern);
    } catch (const std::regex_error& e) {
      throw SpecError(where + "bad regex: " + e.what());
    }
    ++matchers;
  }
  if (r.contains("match")) {
    if (r.at("match") != "*") throw SpecError(where + "\"match\" only accepts \"*\"");
    rule.match = MockRule::Match::wildcard;
    ++matchers;
  }
  if (matchers != 1) throw SpecError(where + "needs exactly one of fingerprint, regex, match");

  if (r.contains("model")) rule.model = r.at("model").get<std::string>();
  rule.target = r.value("target", "user");
  if (rule.target != "user" && rule.target != "all") throw SpecError(where + "target must be user or all");

  if (r.contains("response")) rule.response = r.at("response").get<std::string>();
  if (r.contains("sequence")) {
    rule.sequence = r.at("sequence").get<std::vector<std::string>>();
    if (rule.sequence.empty()) throw SpecError(where + "empty sequence");
  }
  if (r.contains("pool")) {
    const json& pool = r.at("pool");
    if (pool.is_object()) {
      for (const auto& [text, w] : pool.items()) rule.pool.emplace_back(text, w.get<double>());
    } else if (pool.is_array()) {
      for (const auto& entry : pool) rule.pool.emplace_back(entry.at(0).get<std::string>(), entry.at(1).get<double>());
    } else {
      throw SpecError(where + "pool must be an object or an array of [text, weight]");
    }
    if (rule.pool.empty()) throw SpecError(where + "empty pool");
    for (const auto& [text, w] : rule.pool) {
      if (!std::isfinite(w) || w <= 0.0) throw SpecError(where + "pool weights must be positive");
    }
    rule.pool_min_temperature = r.value("pool_min_temperature", 0.0);
    if (rule.pool_min_temperature > 0.0 && !rule.response && rule.sequence.empty()) {
      throw SpecError(where + "pool below pool_min_temperature needs a response or sequence");
    }
  }
  rule.echo = r.value("echo", false);
  if (r.contains("error")) rule.error = parse_error_kind(r.at("error").get<std::string>());
  rule.fail_times = r.value("fail_times", -1);

  const bool answers = rule.response || !rule.sequence.empty() || !rule.pool.empty() || rule.echo;
  if (rule.error == MockRule::Error::none && !answers) throw SpecError(where + "has no response source");
  if (rule.error == MockRule::Error::transient && rule.fail_times >= 0 && !answers) {
    throw SpecError(where + "fail_times needs a response to give afterwards");
  }
  return rule;
}

std::string rule_text(const MockRule& rule, const ChatRequest& req) {
  return rule.target == "all" ? req.all_text() : req.last_user_text();
}

}  // namespace

MockSpec MockSpec::from_json(const json& j) {
  MockSpec spec;
  try {
    if (!j.is_object() || !j.contains("rules") || !j.at("rules").is_array()) {
      throw SpecError("mock spec needs a \"rules\" array");
    }
    spec.seed = j.value("seed", std::uint64_t{0});
    std::size_t i = 0;
    for (const auto& r : j.at("rules")) spec.rules.push_back(parse_rule(r, i++));
  } catch (const json::exception& e) {
    throw SpecError(std::string("malformed mock spec: ") + e.what());
  }

  std::set<std::tuple<int, std::string, std::string, std::string>> seen;
  for (std::size_t i = 0; i < spec.rules.size(); ++i) {
    const auto& r = spec.rules[i];
    auto key = std::make_tuple(static_cast<int>(r.match), r.match == MockRule::Match::wildcard ? "" : r.pattern,
                               r.model.value_or("*"), r.target);
    if (!seen.insert(key).second) {
      throw SpecError("mock rule " + std::to_string(i) + " matches the same requests as an earlier rule");
    }
  }
  return spec;
}

MockSpec MockSpec::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw SpecError("cannot read mock spec " + path.string());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SpecError("mock spec " + path.string() + " is not JSON: " + e.what());
  }
  return from_json(j);
}

MockSpec MockSpec::constant(std::string text) {
  MockSpec spec;
  MockRule rule;
  rule.response = std::move(text);
  spec.rules.push_back(std::move(rule));
  return spec;
}

MockSpec MockSpec::echo() {
  MockSpec spec;
  MockRule rule;
  rule.echo = true;
  spec.rules.push_back(std::move(rule));
  return spec;
}

MockBackend::MockBackend(MockSpec spec, std::string url) : spec_(std::move(spec)), url_(std::move(url)) {}

const MockRule& MockBackend::select(const ChatRequest& req, std::size_t& index) const {
  std::string fingerprint;
  std::vector<std::size_t> tiers[3];
  for (std::size_t i = 0; i < spec_.rules.size(); ++i) {
    const auto& r = spec_.rules[i];
    if (r.model && *r.model != req.model_id) continue;
    switch (r.match) {
      case MockRule::Match::fingerprint:
        if (fingerprint.empty()) fingerprint = request_fingerprint(req);
        if (r.pattern == fingerprint) tiers[0].push_back(i);
        break;
      case MockRule::Match::regex:
        if (std::regex_search(rule_text(r, req), r.compiled)) tiers[1].push_back(i);
        break;
      case MockRule::Match::wildcard:
        tiers[2].push_back(i);
        break;
    }
  }
  for (const auto& tier : tiers) {
    if (tier.size() > 1) {
      throw SpecError("mock rules " + std::to_string(tier[0]) + " and " + std::to_string(tier[1]) +
                      " both match the request");
    }
    if (tier.size() == 1) {
      index = tier.front();
      return spec_.rules[index];
    }
  }
  throw SpecError("no mock rule matches the request");
}

std::string MockBackend::send(const ChatRequest& req, int sample_index) {
  calls_.fetch_add(1);
  std::size_t index = 0;
  const MockRule& rule = select(req, index);

  switch (rule.error) {
    case MockRule::Error::none:
      break;
    case MockRule::Error::transient:
      if (rule.fail_times < 0) throw TransientError("mock transient failure");
      {
        std::lock_guard lock(mu_);
        int& seen = failures_[request_fingerprint(req) + ":" + std::to_string(sample_index)];
        if (seen++ < rule.fail_times) throw TransientError("mock transient failure");
      }
      break;
    case MockRule::Error::unavailable:
      throw BackendUnavailable("mock backend unavailable");
    case MockRule::Error::auth:
      throw AuthError("mock auth failure");
    case MockRule::Error::protocol:
      throw ProtocolError("mock protocol failure");
  }

  if (rule.echo) return req.last_user_text();
  const std::string text = rule_text(rule, req);
  if (!rule.pool.empty() && req.params.effective_temperature() >= rule.pool_min_temperature) {
    Rng rng = make_rng({spec_.seed, index, static_cast<std::uint64_t>(sample_index), fnv1a(text)});
    double total = 0.0;
    for (const auto& [t, w] : rule.pool) total += w;
    const double u = uniform01(rng) * total;
    double acc = 0.0;
    for (const auto& [t, w] : rule.pool) {
      acc += w;
      if (u < acc) return t;
    }
    return rule.pool.back().first;
  }
  if (!rule.sequence.empty() && (sample_index >= 1 || !rule.response)) {
    const auto n = static_cast<int>(rule.sequence.size());
    const int slot = sample_index >= 1 ? (sample_index - 1) % n : 0;
    return rule.sequence[static_cast<std::size_t>(slot)];
  }
  if (rule.response) return *rule.response;
  throw SpecError("mock rule " + std::to_string(index) + " has no answer for this request");
}

std::shared_ptr<ChatBackend> make_backend(const std::string& url, const std::string& api_key) {
  if (url == "mock:echo") return std::make_shared<MockBackend>(MockSpec::echo(), url);
  if (url.rfind("mock:const:", 0) == 0) return std::make_shared<MockBackend>(MockSpec::constant(url.substr(11)), url);
  if (url.rfind("mock:", 0) == 0) return std::make_shared<MockBackend>(MockSpec::load(url.substr(5)), url);
  if (url.rfind("http://", 0) == 0 || url.rfind("https://", 0) == 0) {
    return std::make_shared<HttpBackend>(HttpBackendOptions{.base_url = url, .api_key = api_key});
  }
  throw ConfigError("unsupported backend URL '" + url + "'");
}

// ---------------------------------------------------------------------------
// Cache

CacheKey CacheKey::of(std::string_view backend_url, const ChatRequest& req, int sample_index) {
  const json j = {{"backend", backend_url}, {"request", to_wire_json(req)}, {"sample_index", sample_index}};
  return CacheKey{sha256(j.dump())};
}

std::string CacheKey::hex() const { return to_hex(digest.data(), digest.size()); }

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const CacheKey& key) const {
  const std::string hex = key.hex();
  return dir_ / hex.substr(0, 2) / (hex + ".json");
}

std::optional<CacheEntry> ResponseCache::load(const CacheKey& key) const {
  const auto path = path_for(key);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  try {
    const json j = json::parse(read_file(path));
    CacheEntry e{j.at("request_digest").get<std::string>(), j.at("text").get<std::string>(),
                 j.value("created_at", ""), j.value("backend", "")};
    if (e.request_digest != key.hex()) return std::nullopt;
    return e;
  } catch (const std::exception& e) {
    log().warn("ignoring unreadable cache entry {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

void ResponseCache::store(const CacheKey& key, std::string_view text, std::string_view backend) const {
  const json j = {{"request_digest", key.hex()}, {"text", text}, {"created_at", utc_timestamp()}, {"backend", backend}};
  write_file_atomic(path_for(key), j.dump());
}

std::size_t ResponseCache::entry_count() const {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir_)) {
    if (e.is_regular_file() && e.path().extension() == ".json") ++n;
  }
  return n;
}

std::size_t ResponseCache::clear() const {
  std::vector<std::filesystem::path> doomed;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir_)) {
    if (e.is_regular_file() && e.path().extension() == ".json") doomed.push_back(e.path());
  }
  for (const auto& p : doomed) std::filesystem::remove(p);
  return doomed.size();
}

// ---------------------------------------------------------------------------
// Client

ModelClient::ModelClient(std::shared_ptr<ChatBackend> backend, std::shared_ptr<ResponseCache> cache,
                         ClientOptions options)
    : backend_(std::move(backend)),
      cache_(std::move(cache)),
      options_(options),
      in_flight_(std::clamp(options.max_in_flight, 1, 1024)) {
  if (!backend_) throw ConfigError("model client needs a backend");
  if (options_.max_attempts < 1) throw ConfigError("max_attempts must be positive");
}

std::string ModelClient::backend_id(std::string_view model_id) const {
  return std::string(model_id) + "@" + backend_->url();
}

AnswerSample ModelClient::complete(const ChatRequest& req, int sample_index) {
  req.validate();
  req.params.validate();
  AnswerSample sample{.text = {},
                      .perturbation_index = sample_index,
                      .gen_temperature = req.params.effective_temperature(),
                      .backend_id = backend_id(req.model_id)};

  const CacheKey key = CacheKey::of(backend_->url(), req, sample_index);
  if (cache_) {
    if (auto hit = cache_->load(key)) {
      cache_hits_.fetch_add(1);
      sample.text = std::move(hit->text);
      return sample;
    }
  }

  struct Slot {
    std::counting_semaphore<1024>& sem;
    explicit Slot(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
    ~Slot() { sem.release(); }
  } slot(in_flight_);

  for (int attempt = 1;; ++attempt) {
    try {
      network_calls_.fetch_add(1);
      sample.text = backend_->send(req, sample_index);
      break;
    } catch (const TransientError& e) {
      if (attempt >= options_.max_attempts) {
        throw BackendUnavailable("giving up after " + std::to_string(attempt) + " attempts: " + e.what());
      }
      log().info("attempt {} failed ({}), retrying", attempt, e.what());
      std::this_thread::sleep_for(options_.backoff_base * (1 << (attempt - 1)));
    }
  }

  if (cache_) cache_->store(key, sample.text, backend_->url());
  return sample;
}

}  // namespace vlu
