#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "tmpdir.hpp"
#include "toolgap/backend.hpp"
#include "toolgap/corpus.hpp"
#include "toolgap/http_backend.hpp"
#include "toolgap/mock_backend.hpp"

using namespace toolgap;

namespace {

Corpus small_corpus() { return make_arithmetic_corpus(3, 100); }

const Sample& sample_of(const Corpus& c, const std::string& family) {
  for (const auto& s : c.samples)
    if (s.family == family) return s;
  throw std::logic_error("no sample of " + family);
}

CompletionRequest collection_request(const std::string& id, bool capture = true) {
  CompletionRequest r;
  r.messages = {{"user", "prompt"}};
  r.tools = {make_calculator().spec};
  r.capture_decision = capture;
  r.context = {id, 0, Stage::Collection};
  return r;
}

// Counts failures before succeeding.
class FlakyBackend final : public Backend {
 public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  Completion complete(const CompletionRequest&) override {
    ++calls;
    if (calls <= failures_) throw TransportError("flaky");
    return Completion{"ok", std::nullopt, std::nullopt};
  }
  int calls = 0;

 private:
  int failures_;
};

}  // namespace

TEST_CASE("calculator tool") {
  const auto calc = make_calculator();
  CHECK(calc.spec.name == "calculator");
  const auto ok = run_tool(calc, {{"expression", "(67 + 68) * (52 - 88)"}});
  CHECK(ok.ok);
  CHECK(ok.text == "-4860");
  const auto div = run_tool(calc, {{"expression", "1 / 0"}});
  CHECK_FALSE(div.ok);
  CHECK(div.text.rfind("error", 0) == 0);
  CHECK_FALSE(run_tool(calc, json::object()).ok);
  CHECK_FALSE(run_tool(calc, {{"expression", 12}}).ok);
}

TEST_CASE("search tool over fixtures") {
  SearchFixtures fx;
  fx.add("Capital of France", "Paris is the capital of France.");
  const auto search = make_search(fx);
  CHECK(run_tool(search, {{"query", "  capital   OF france "}}).text == "Paris is the capital of France.");
  CHECK(run_tool(search, {{"query", "capital of Spain"}}).text == std::string(kNoResults));
  CHECK_FALSE(run_tool(search, {{"q", "x"}}).ok);
  CHECK(SearchFixtures::normalize("  A\tB  c ") == "a b c");
}

TEST_CASE("trigger readout over a full distribution") {
  TriggerConfig cfg;
  cfg.token_ids["qwen"] = {2};
  cfg.token_ids["multi"] = {1, 2};
  SUBCASE("tool token is the argmax") {
    const std::vector<double> p{0.35, 0.25, 0.4};
    const auto r = detect_tool_trigger(cfg, "qwen", std::span<const double>(p));
    CHECK(r.is_tool_argmax);
    CHECK(r.p_tool == 0.4);
    CHECK(r.p_best_nontool == 0.35);
  }
  SUBCASE("zero tool mass") {
    const std::vector<double> p{0.6, 0.4, 0.0};
    const auto r = detect_tool_trigger(cfg, "qwen", std::span<const double>(p));
    CHECK_FALSE(r.is_tool_argmax);
    CHECK(r.p_tool == 0.0);
  }
  SUBCASE("several triggers take the maximum") {
    const std::vector<double> p{0.3, 0.2, 0.5};
    const auto r = detect_tool_trigger(cfg, "multi", std::span<const double>(p));
    CHECK(r.p_tool == 0.5);
    CHECK(r.p_best_nontool == 0.3);
  }
  SUBCASE("tie is not an argmax") {
    const std::vector<double> p{0.4, 0.2, 0.4};
    CHECK_FALSE(detect_tool_trigger(cfg, "qwen", std::span<const double>(p)).is_tool_argmax);
  }
  SUBCASE("errors") {
    const std::vector<double> p{0.5, 0.5, 0.0};
    CHECK_THROWS_AS(detect_tool_trigger(cfg, "llama", std::span<const double>(p)), ConfigError);
    const std::vector<double> bad{0.5, 0.6, 0.1};
    CHECK_THROWS_AS(detect_tool_trigger(cfg, "qwen", std::span<const double>(bad)), std::invalid_argument);
  }
}

TEST_CASE("trigger readout over top-k tokens") {
  TriggerConfig cfg;
  cfg.token_texts["qwen"] = {"<tool_call>"};
  const std::vector<TokenProb> top{{"The", 0.3}, {"<tool_call>", 0.6}, {"I", 0.05}};
  const auto r = detect_tool_trigger(cfg, "qwen", std::span<const TokenProb>(top));
  CHECK(r.is_tool_argmax);
  CHECK(r.p_tool == 0.6);
  CHECK(r.p_best_nontool == 0.3);
  const std::vector<TokenProb> absent{{"The", 0.7}};
  CHECK(detect_tool_trigger(cfg, "qwen", std::span<const TokenProb>(absent)).p_tool == 0.0);
}

TEST_CASE("mock backend follows its script") {
  const auto corpus = small_corpus();
  const auto& mult = sample_of(corpus, "MultiplicationChain");
  const auto& single = sample_of(corpus, "SingleStepArithmetic");
  std::vector<ScriptEntry> script{
      {mult.id, {true, false}, true, Decision{0.7, 0.2}, std::nullopt, std::nullopt, false},
      {single.id, {true, true}, false, Decision{0.3, 0.1 + 0.5}, std::nullopt, std::nullopt, false},
  };
  MockBackend mock(script, corpus);

  SUBCASE("scripted tool call on a multiplication chain") {
    const auto a = mock.complete(collection_request(mult.id));
    REQUIRE(a.tool_call.has_value());
    CHECK(a.tool_call->name == "calculator");
    CHECK(a.tool_call->arguments["expression"] == mult.question);
    CHECK(a.decision == Decision{0.7, 0.2});
    CHECK(mock.complete(collection_request(mult.id)) == a);
  }
  SUBCASE("decision pass-through") {
    const auto r = mock.complete(collection_request(single.id));
    CHECK_FALSE(r.tool_call.has_value());
    REQUIRE(r.decision.has_value());
    CHECK(r.decision->p_tool == 0.3);
    CHECK_FALSE(mock.complete(collection_request(single.id, false)).decision.has_value());
  }
  SUBCASE("labeling runs answer per script") {
    CompletionRequest r;
    r.messages = {{"user", mult.prompt}};
    r.temperature = 0.7;
    r.context = {mult.id, 0, Stage::Labeling};
    CHECK(mock.complete(r).text == "The answer is " + mult.answers[0] + ".");
    r.context.run_index = 1;
    CHECK(mock.complete(r).text != "The answer is " + mult.answers[0] + ".");
    r.context.run_index = 2;
    CHECK_THROWS_AS(mock.complete(r), ConfigError);
  }
  SUBCASE("after a tool turn the mock answers with the result") {
    auto r = collection_request(mult.id);
    r.messages.push_back({"assistant", "", ToolCall{"calculator", {{"expression", mult.question}}}, ""});
    r.messages.push_back({"tool", "4224", std::nullopt, "calculator"});
    const auto c = mock.complete(r);
    CHECK(c.text == "The answer is 4224.");
    CHECK_FALSE(c.decision.has_value());
  }
  SUBCASE("unknown sample") { CHECK_THROWS_AS(mock.complete(collection_request("nope")), ConfigError); }
}

TEST_CASE("mock script validation") {
  const auto corpus = small_corpus();
  const auto id = corpus.samples[0].id;
  CHECK_THROWS_AS(MockBackend({{"ghost", {true}, false, std::nullopt, std::nullopt, std::nullopt, false}}, corpus),
                  ConfigError);
  // p_tool > p_best but no call: incoherent with greedy decoding.
  CHECK_THROWS_AS(MockBackend({{id, {true}, false, Decision{0.6, 0.3}, std::nullopt, std::nullopt, false}}, corpus),
                  ConfigError);
  // A tie must not call.
  CHECK_THROWS_AS(MockBackend({{id, {true}, true, Decision{0.3, 0.3}, std::nullopt, std::nullopt, false}}, corpus),
                  ConfigError);
  CHECK_NOTHROW(MockBackend({{id, {true}, false, Decision{0.3, 0.3}, std::nullopt, std::nullopt, false}}, corpus));
  CHECK_THROWS_AS(MockBackend({{id, {true}, true, Decision{0.7, 0.4}, std::nullopt, std::nullopt, false}}, corpus),
                  ConfigError);
  const ScriptEntry e{id, {true}, false, std::nullopt, std::nullopt, std::nullopt, false};
  CHECK_THROWS_AS(MockBackend({e, e}, corpus), ConfigError);
}

TEST_CASE("mock script file round-trip") {
  TempDir dir;
  const auto corpus = small_corpus();
  std::vector<ScriptEntry> script{
      {corpus.samples[0].id, {true, false, true}, true, Decision{0.5, 0.25}, "Yes.", false, false},
      {corpus.samples[1].id, {true}, false, std::nullopt, std::nullopt, std::nullopt, true},
  };
  save_script(script, dir / "s.jsonl");
  CHECK(load_script(dir / "s.jsonl") == script);
}

TEST_CASE("retry policy") {
  RetryPolicy fast{4, std::chrono::milliseconds(0), 2.0};
  FlakyBackend twice(2);
  CHECK(complete_with_retry(twice, {}, fast).text == "ok");
  CHECK(twice.calls == 3);
  FlakyBackend always(100);
  CHECK_THROWS_AS(complete_with_retry(always, {}, fast), TransportError);
  CHECK(always.calls == 4);
}

TEST_CASE("message json round-trip") {
  const Message m{"assistant", "", ToolCall{"calculator", {{"expression", "1 + 2"}}}, ""};
  CHECK(message_from_json(to_json(m)) == m);
  const Message t{"tool", "3", std::nullopt, "calculator"};
  CHECK(message_from_json(to_json(t)) == t);
}

TEST_CASE("http backend speaks chat completions") {
  httplib::Server server;
  std::atomic<int> hits{0};
  json last_body;
  std::string last_auth;
  std::mutex mu;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    {
      std::lock_guard lock(mu);
      last_body = json::parse(req.body);
      last_auth = req.get_header_value("Authorization");
    }
    const auto body = json::parse(req.body);
    if (body["model"] == "flaky" && n == 1) {
      res.status = 503;
      return;
    }
    if (body["model"] == "broken") {
      res.status = 400;
      res.set_content("bad request", "text/plain");
      return;
    }
    json msg = {{"role", "assistant"}, {"content", nullptr}};
    if (body.contains("tools"))
      msg["tool_calls"] = json::array(
          {{{"id", "x"}, {"type", "function"}, {"function", {{"name", "calculator"}, {"arguments", "{\"expression\":\"2 * 3\"}"}}}}});
    else
      msg["content"] = "The answer is 6.";
    json choice = {{"index", 0}, {"message", msg}};
    if (body.value("logprobs", false))
      choice["logprobs"] = {
          {"content",
           json::array({{{"token", "<tool_call>"},
                         {"logprob", std::log(0.75)},
                         {"top_logprobs", json::array({{{"token", "<tool_call>"}, {"logprob", std::log(0.75)}},
                                                       {{"token", "The"}, {"logprob", std::log(0.2)}}})}}})}};
    res.set_content(json{{"choices", json::array({choice})}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpBackendConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
  cfg.model = "m";
  cfg.api_key = "secret";
  cfg.model_family = "qwen";
  cfg.triggers.token_texts["qwen"] = {"<tool_call>"};

  SUBCASE("plain answer") {
    HttpBackend b(cfg);
    CompletionRequest r;
    r.messages = {{"user", "2 * 3"}};
    r.temperature = 0.7;
    const auto c = b.complete(r);
    CHECK(c.text == "The answer is 6.");
    CHECK_FALSE(c.tool_call.has_value());
    std::lock_guard lock(mu);
    CHECK(last_auth == "Bearer secret");
    CHECK(last_body["temperature"] == 0.7);
    CHECK_FALSE(last_body.contains("tools"));
  }
  SUBCASE("tool call with decision capture") {
    HttpBackend b(cfg);
    auto r = collection_request("s");
    const auto c = b.complete(r);
    REQUIRE(c.tool_call.has_value());
    CHECK(c.tool_call->name == "calculator");
    CHECK(c.tool_call->arguments["expression"] == "2 * 3");
    REQUIRE(c.decision.has_value());
    CHECK(c.decision->p_tool == doctest::Approx(0.75));
    CHECK(c.decision->p_best_nontool == doctest::Approx(0.2));
    std::lock_guard lock(mu);
    CHECK(last_body["tools"][0]["function"]["name"] == "calculator");
    CHECK(last_body["top_logprobs"] == 20);
  }
  SUBCASE("tool turns are linked by call id") {
    HttpBackend b(cfg);
    CompletionRequest r;
    r.messages = {{"user", "q"},
                  {"assistant", "", ToolCall{"calculator", {{"expression", "2 * 3"}}}, ""},
                  {"tool", "6", std::nullopt, "calculator"}};
    const auto body = b.build_body(r);
    CHECK(body["messages"][1]["tool_calls"][0]["id"] == body["messages"][2]["tool_call_id"]);
    CHECK(body["messages"][1]["tool_calls"][0]["function"]["arguments"] == "{\"expression\":\"2 * 3\"}");
  }
  SUBCASE("server errors") {
    auto flaky = cfg;
    flaky.model = "flaky";
    HttpBackend fb(flaky);
    CompletionRequest r;
    r.messages = {{"user", "q"}};
    CHECK_THROWS_AS(fb.complete(r), TransportError);
    CHECK(complete_with_retry(fb, r, {3, std::chrono::milliseconds(0), 1.0}).text == "The answer is 6.");
    auto broken = cfg;
    broken.model = "broken";
    HttpBackend bb(broken);
    CHECK_THROWS_AS(bb.complete(r), std::runtime_error);
  }
  SUBCASE("configuration errors") {
    auto no_trigger = cfg;
    no_trigger.model_family = "llama";
    HttpBackend b(no_trigger);
    CHECK_THROWS_AS(b.complete(collection_request("s")), ConfigError);
    auto https = cfg;
    https.endpoint = "https://example.org";
    CHECK_THROWS_AS(HttpBackend{https}, ConfigError);
  }
  server.stop();
  th.join();

  SUBCASE("unreachable server is a transport error") {
    HttpBackend b(cfg);
    CompletionRequest r;
    r.messages = {{"user", "q"}};
    CHECK_THROWS_AS(b.complete(r), TransportError);
  }
}
