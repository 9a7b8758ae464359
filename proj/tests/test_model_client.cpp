#include <doctest.h>

#include <atomic>
#include <set>
#include <thread>

#include <httplib.h>

#include "support/fixtures.hpp"
#include "vlu/errors.hpp"
#include "vlu/model_client.hpp"

using namespace vlu;

namespace {

ChatRequest text_request(std::string text, double temperature = 1.0, std::string model = "m") {
  ChatRequest req{.model_id = std::move(model), .messages = {ChatMessage::text("user", std::move(text))}, .params = {}};
  req.params.temperature = temperature;
  return req;
}

MockBackend mock(const json& spec) { return MockBackend(MockSpec::from_json(spec)); }

ClientOptions fast(int attempts = 3) { return ClientOptions{.max_attempts = attempts, .backoff_base = std::chrono::milliseconds(1)}; }

/// Local server answering with a scripted status sequence; the last status repeats.
class ScriptedServer {
 public:
  explicit ScriptedServer(std::vector<int> statuses, std::string body = R"({"choices":[{"message":{"content":"ok"}}]})")
      : statuses_(std::move(statuses)), body_(std::move(body)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const std::size_t i = hits_.fetch_add(1);
      last_auth_ = req.get_header_value("Authorization");
      last_body_ = req.body;
      res.status = statuses_[std::min(i, statuses_.size() - 1)];
      res.set_content(res.status == 200 ? body_ : "{}", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ScriptedServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::size_t hits() const { return hits_.load(); }
  std::string last_auth() const { return last_auth_; }
  json last_body() const { return json::parse(last_body_); }

 private:
  httplib::Server server_;
  std::vector<int> statuses_;
  std::string body_;
  std::atomic<std::size_t> hits_{0};
  std::string last_auth_;
  std::string last_body_;
  int port_ = 0;
  std::thread thread_;
};

ModelClient http_client(const std::string& url, int attempts = 3, std::string key = {},
                        std::chrono::seconds timeout = std::chrono::seconds(5)) {
  return ModelClient(std::make_shared<HttpBackend>(HttpBackendOptions{.base_url = url, .api_key = std::move(key),
                                                                      .timeout = timeout}),
                     nullptr, fast(attempts));
}

}  // namespace

TEST_CASE("parameter profiles") {
  const auto llava = profile_params("llava15");
  CHECK(llava.temperature == 0.1);
  CHECK(llava.max_new_tokens == 32);
  CHECK_FALSE(llava.top_k);
  const auto qwen = profile_params("qwen2vl");
  CHECK(qwen.top_k == 50);
  CHECK(qwen.top_p == 0.95);
  CHECK(qwen.repetition_penalty == 1.05);
  const auto helper = profile_params("qwen2.5");
  CHECK(helper.top_p == 0.8);
  CHECK(helper.max_new_tokens == 256);
  CHECK_THROWS_AS(profile_params("gpt"), ConfigError);

  CHECK(resolve_profile("auto", "Qwen/Qwen2-VL-7B-Instruct") == "qwen2vl");
  CHECK(resolve_profile("auto", "OpenGVLab/InternVL2-8B") == "internvl2");
  CHECK(resolve_profile("auto", "llava-hf/llava-v1.6-mistral-7b-hf") == "llavanext");
  CHECK(resolve_profile("auto", "llava-hf/llava-1.5-7b-hf") == "llava15");
  CHECK(resolve_profile("auto", "something-else") == "default");
  CHECK(resolve_profile("qwen2vl", "anything") == "qwen2vl");
  CHECK_THROWS_AS(resolve_profile("bogus", "m"), ConfigError);
}

TEST_CASE("generation parameter validation") {
  GenerationParams p;
  CHECK_NOTHROW(p.validate());
  p.temperature = -0.1;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.top_p = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.max_new_tokens = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.do_sample = false;
  CHECK(p.effective_temperature() == 0.0);
}

TEST_CASE("wire format") {
  ChatRequest req = text_request("hello", 0.7);
  req.params.top_k = 50;
  req.messages.front().parts.insert(req.messages.front().parts.begin(), ImagePart{"image/png", "abc"});
  const json body = to_wire_json(req);
  CHECK(body["model"] == "m");
  CHECK(body["temperature"] == 0.7);
  CHECK(body["top_k"] == 50);
  CHECK_FALSE(body.contains("repetition_penalty"));
  CHECK(body["max_tokens"] == 32);
  const json& content = body["messages"][0]["content"];
  REQUIRE(content.size() == 2);
  CHECK(content[0]["image_url"]["url"] == "data:image/png;base64,YWJj");
  CHECK(content[1] == json{{"type", "text"}, {"text", "hello"}});
  CHECK(to_wire_json(text_request("plain"))["messages"][0]["content"] == "plain");

  ChatRequest two = req;
  two.messages.push_back(req.messages.front());
  CHECK_THROWS_AS(two.validate(), ConfigError);
  CHECK_THROWS_AS(ChatRequest{}.validate(), ConfigError);
}

TEST_CASE("fingerprint ignores parameters") {
  CHECK(request_fingerprint(text_request("a", 0.1)) == request_fingerprint(text_request("a", 1.0)));
  CHECK(request_fingerprint(text_request("a")) != request_fingerprint(text_request("b")));
  CHECK(request_fingerprint(text_request("a", 1, "x")) != request_fingerprint(text_request("a", 1, "y")));
}

TEST_CASE("mock matcher tiers and filters") {
  const ChatRequest req = text_request("Q1: what?");
  auto b = mock({{"rules",
                  {{{"match", "*"}, {"response", "wild"}},
                   {{"regex", "^Q1:"}, {"response", "regex"}},
                   {{"fingerprint", request_fingerprint(req)}, {"response", "fp"}},
                   {{"regex", "^Q2:"}, {"model", "other"}, {"response", "filtered"}}}}});
  CHECK(b.send(req, 0) == "fp");
  CHECK(b.send(text_request("Q1: again"), 0) == "regex");
  CHECK(b.send(text_request("Q2: x"), 0) == "wild");
  CHECK(b.send(text_request("Q2: x", 1, "other"), 0) == "filtered");
  CHECK(b.calls() == 4);
}

TEST_CASE("mock regex targets the last user message unless asked for all") {
  ChatRequest req = text_request("question");
  req.messages.insert(req.messages.begin(), ChatMessage::text("system", "SYS"));
  auto user = mock({{"rules", {{{"regex", "SYS"}, {"response", "x"}}}}});
  CHECK_THROWS_AS(user.send(req, 0), SpecError);
  auto all = mock({{"rules", {{{"regex", "SYS"}, {"target", "all"}, {"response", "x"}}}}});
  CHECK(all.send(req, 0) == "x");
}

TEST_CASE("mock spec errors") {
  CHECK_THROWS_AS(MockSpec::from_json(json::object()), SpecError);
  CHECK_THROWS_AS(MockSpec::from_json({{"rules", {{{"response", "x"}}}}}), SpecError);
  CHECK_THROWS_AS(MockSpec::from_json({{"rules", {{{"match", "*"}}}}}), SpecError);
  CHECK_THROWS_AS(MockSpec::from_json({{"rules", {{{"match", "?"}, {"response", "x"}}}}}), SpecError);
  CHECK_THROWS_AS(MockSpec::from_json({{"rules", {{{"regex", "("}, {"response", "x"}}}}}), SpecError);
  CHECK_THROWS_AS(MockSpec::from_json({{"rules", {{{"match", "*"}, {"error", "boom"}}}}}), SpecError);
  CHECK_THROWS_AS(MockSpec::from_json({{"rules", {{{"match", "*"}, {"sequence", json::array()}}}}}), SpecError);
  CHECK_THROWS_AS(MockSpec::from_json({{"rules", {{{"match", "*"}, {"pool", {{"a", -1.0}}}}}}}), SpecError);
  CHECK_THROWS_AS(
      MockSpec::from_json({{"rules", {{{"regex", "a"}, {"response", "x"}}, {{"regex", "a"}, {"response", "y"}}}}}),
      SpecError);

  auto ambiguous = mock({{"rules", {{{"regex", "a"}, {"response", "x"}}, {{"regex", "b"}, {"response", "y"}}}}});
  CHECK_THROWS_AS(ambiguous.send(text_request("ab"), 0), SpecError);
  CHECK_THROWS_AS(ambiguous.send(text_request("zz"), 0), SpecError);

  fixture::TempDir dir;
  CHECK_THROWS_AS(MockSpec::load(dir / "missing.json"), SpecError);
  fixture::write_text(dir / "bad.json", "{not json");
  CHECK_THROWS_AS(MockSpec::load(dir / "bad.json"), SpecError);
}

TEST_CASE("mock sequence by sample index") {
  auto b = mock({{"rules", {{{"match", "*"}, {"response", "first"}, {"sequence", {"s1", "s2", "s3"}}}}}});
  const auto req = text_request("q");
  CHECK(b.send(req, 0) == "first");
  CHECK(b.send(req, 1) == "s1");
  CHECK(b.send(req, 3) == "s3");
  CHECK(b.send(req, 4) == "s1");
  auto no_response = mock({{"rules", {{{"match", "*"}, {"sequence", {"s1", "s2"}}}}}});
  CHECK(no_response.send(req, 0) == "s1");
}

TEST_CASE("mock pool draws replay and respect the temperature floor") {
  const json spec = {{"seed", 11},
                     {"rules",
                      {{{"match", "*"},
                        {"response", "cold"},
                        {"pool", {{"a", 1.0}, {"b", 1.0}, {"c", 1.0}, {"d", 1.0}}},
                        {"pool_min_temperature", 0.5}}}}};
  auto one = mock(spec);
  auto two = mock(spec);
  std::set<std::string> seen;
  for (int i = 1; i <= 40; ++i) {
    const auto a = one.send(text_request("q", 1.0), i);
    CHECK(a == two.send(text_request("q", 1.0), i));
    seen.insert(a);
  }
  CHECK(seen.size() == 4);
  CHECK(one.send(text_request("q", 0.1), 3) == "cold");

  // Weighted: "heavy" should dominate.
  auto w = mock({{"rules", {{{"match", "*"}, {"pool", json::array({json::array({"heavy", 99.0}), json::array({"light", 1.0})})}}}}});
  int heavy = 0;
  for (int i = 0; i < 200; ++i) heavy += w.send(text_request("q"), i) == "heavy" ? 1 : 0;
  CHECK(heavy > 180);
}

TEST_CASE("mock echo and factories") {
  CHECK(make_backend("mock:echo")->send(text_request("say this"), 0) == "say this");
  CHECK(make_backend("mock:const:A")->send(text_request("x"), 0) == "A");
  CHECK(make_backend("http://localhost:1")->url() == "http://localhost:1");
  CHECK_THROWS_AS(make_backend("ftp://x"), ConfigError);
  CHECK_THROWS_AS(make_backend("mock:/no/such/spec.json"), SpecError);
}

TEST_CASE("transient failures retry within the attempt budget") {
  auto backend = std::make_shared<MockBackend>(
      MockSpec::from_json({{"rules", {{{"match", "*"}, {"error", "transient"}, {"fail_times", 2}, {"response", "ok"}}}}}));
  ModelClient client(backend, nullptr, fast(3));
  CHECK(client.complete(text_request("q"), 1).text == "ok");
  CHECK(backend->calls() == 3);

  auto always = std::make_shared<MockBackend>(MockSpec::from_json({{"rules", {{{"match", "*"}, {"error", "transient"}}}}}));
  ModelClient give_up(always, nullptr, fast(3));
  CHECK_THROWS_AS(give_up.complete(text_request("q"), 1), BackendUnavailable);
  CHECK(always->calls() == 3);

  auto auth = std::make_shared<MockBackend>(MockSpec::from_json({{"rules", {{{"match", "*"}, {"error", "auth"}}}}}));
  ModelClient no_retry(auth, nullptr, fast(3));
  CHECK_THROWS_AS(no_retry.complete(text_request("q"), 1), AuthError);
  CHECK(auth->calls() == 1);
}

TEST_CASE("client stamps sample metadata") {
  ModelClient client(make_backend("mock:const:x"), nullptr, fast());
  const auto s = client.complete(text_request("q", 0.4, "vlm"), 3);
  CHECK(s.text == "x");
  CHECK(s.perturbation_index == 3);
  CHECK(s.gen_temperature == 0.4);
  CHECK(s.backend_id == "vlm@mock:const:x");
  CHECK_THROWS_AS(ModelClient(nullptr), ConfigError);
  CHECK_THROWS_AS(ModelClient(make_backend("mock:echo"), nullptr, fast(0)), ConfigError);
}

TEST_CASE("cache keys, layout and round trip") {
  const auto req = text_request("q", 1.0);
  const auto k0 = CacheKey::of("b", req, 0);
  CHECK(k0 == CacheKey::of("b", req, 0));
  CHECK_FALSE(k0 == CacheKey::of("b", req, 1));
  CHECK_FALSE(k0 == CacheKey::of("c", req, 0));
  CHECK_FALSE(k0 == CacheKey::of("b", text_request("q", 0.5), 0));
  CHECK(k0.hex().size() == 64);

  fixture::TempDir dir;
  auto cache = std::make_shared<ResponseCache>(dir / "cache");
  CHECK(cache->path_for(k0) == dir / "cache" / k0.hex().substr(0, 2) / (k0.hex() + ".json"));
  CHECK_FALSE(cache->load(k0));
  cache->store(k0, "answer", "b");
  const auto hit = cache->load(k0);
  REQUIRE(hit);
  CHECK(hit->text == "answer");
  CHECK(hit->backend == "b");
  CHECK(cache->entry_count() == 1);

  fixture::write_text(cache->path_for(k0), "garbage");
  CHECK_FALSE(cache->load(k0));
  CHECK(cache->clear() == 1);
  CHECK(cache->entry_count() == 0);
}

TEST_CASE("a warm cache avoids the backend") {
  fixture::TempDir dir;
  auto cache = std::make_shared<ResponseCache>(dir.path());
  auto backend = std::make_shared<MockBackend>(MockSpec::constant("A"), "mock:const:A");
  ModelClient cold(backend, cache, fast());
  for (int i = 0; i < 5; ++i) cold.complete(text_request("q"), i);
  CHECK(cold.network_calls() == 5);
  ModelClient warm(backend, cache, fast());
  for (int i = 0; i < 5; ++i) CHECK(warm.complete(text_request("q"), i).text == "A");
  CHECK(warm.network_calls() == 0);
  CHECK(warm.cache_hits() == 5);
  CHECK(backend->calls() == 5);
}

TEST_CASE("HTTP backend parses responses") {
  CHECK(HttpBackend::parse_response(R"({"choices":[{"message":{"content":"hi"}}]})") == "hi");
  CHECK(HttpBackend::parse_response(
            R"({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]})") ==
        "ab");
  CHECK_THROWS_AS(HttpBackend::parse_response("nope"), ProtocolError);
  CHECK_THROWS_AS(HttpBackend::parse_response(R"({"choices":[]})"), ProtocolError);
  CHECK_THROWS_AS(HttpBackend::parse_response(R"({"choices":[{"message":{}}]})"), ProtocolError);
  CHECK_THROWS_AS(HttpBackend(HttpBackendOptions{.base_url = "localhost:80"}), ConfigError);
}

TEST_CASE("HTTP fault injection") {
  SUBCASE("success with bearer token and wire body") {
    ScriptedServer server({200});
    auto client = http_client(server.url(), 3, "secret");
    CHECK(client.complete(text_request("q", 0.3), 1).text == "ok");
    CHECK(server.last_auth() == "Bearer secret");
    CHECK(server.last_body()["temperature"] == 0.3);
  }
  SUBCASE("a transient 503 is retried") {
    ScriptedServer server({503, 200});
    auto client = http_client(server.url() + "/v1/");
    CHECK(client.complete(text_request("q"), 1).text == "ok");
    CHECK(server.hits() == 2);
  }
  SUBCASE("persistent 500 exhausts the attempts") {
    ScriptedServer server({500});
    auto client = http_client(server.url());
    CHECK_THROWS_AS(client.complete(text_request("q"), 1), BackendUnavailable);
    CHECK(server.hits() == 3);
  }
  SUBCASE("429 is transient") {
    ScriptedServer server({429, 429, 200});
    auto client = http_client(server.url());
    CHECK(client.complete(text_request("q"), 1).text == "ok");
  }
  SUBCASE("401 and 403 are not retried") {
    for (int status : {401, 403}) {
      ScriptedServer server({status});
      auto client = http_client(server.url());
      CHECK_THROWS_AS(client.complete(text_request("q"), 1), AuthError);
      CHECK(server.hits() == 1);
    }
  }
  SUBCASE("other 4xx is a protocol error") {
    ScriptedServer server({404});
    auto client = http_client(server.url());
    CHECK_THROWS_AS(client.complete(text_request("q"), 1), ProtocolError);
    CHECK(server.hits() == 1);
  }
  SUBCASE("malformed body") {
    ScriptedServer server({200}, "{\"choices\": 5}");
    auto client = http_client(server.url());
    CHECK_THROWS_AS(client.complete(text_request("q"), 1), ProtocolError);
  }
  SUBCASE("unreachable port") {
    int port = 0;
    {
      httplib::Server probe;
      port = probe.bind_to_any_port("127.0.0.1");
    }
    auto client = http_client("http://127.0.0.1:" + std::to_string(port), 2, {}, std::chrono::seconds(1));
    CHECK_THROWS_AS(client.complete(text_request("q"), 1), BackendUnavailable);
  }
}
