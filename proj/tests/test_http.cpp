#include <doctest.h>
#include <httplib.h>

#include <cmath>
#include <thread>

#include "curate/error.hpp"
#include "curate/http_backends.hpp"
#include "support.hpp"

using namespace curate;
using nlohmann::json;

namespace {

class FakeService {
 public:
  FakeService() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeService() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

void reply(httplib::Response& res, const json& body) { res.set_content(body.dump(), "application/json"); }

}  // namespace

TEST_CASE("endpoint parsing") {
  auto e = Endpoint::parse("http://localhost:8080/v1/embed");
  CHECK(e.origin == "http://localhost:8080");
  CHECK(e.path == "/v1/embed");
  CHECK(Endpoint::parse("https://api.example.com").path == "/");
  CHECK_THROWS_AS(Endpoint::parse("localhost:80/x"), Error);
  CHECK_THROWS_AS(Endpoint::parse("ftp://host/x"), Error);
}

TEST_CASE("embedding adapters") {
  FakeService svc;
  std::string auth;
  svc.server().Post("/native", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    auto body = json::parse(req.body);
    json vectors = json::array();
    for (const auto& t : body["texts"]) vectors.push_back({double(t.get<std::string>().size()), 1.0});
    reply(res, {{"vectors", vectors}});
  });
  svc.server().Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    json data = json::array();
    // out of order on purpose
    for (std::size_t i = body["input"].size(); i-- > 0;) {
      data.push_back({{"index", i}, {"embedding", {double(body["input"][i].get<std::string>().size()), 2.0}}});
    }
    reply(res, {{"data", data}});
  });

  HttpOptions opts;
  opts.api_key = "secret";
  HttpEmbeddingBackend native(Endpoint::parse(svc.url("/native")), "enc", HttpEmbeddingBackend::Shape::native, opts);
  std::vector<std::string> texts{"a", "bbb"};
  auto v = native.embed(texts);
  CHECK(v == std::vector<Embedding>{{1, 1}, {3, 1}});
  CHECK(auth == "Bearer secret");

  HttpEmbeddingBackend api(Endpoint::parse(svc.url("/v1/embeddings")), "enc", HttpEmbeddingBackend::Shape::embeddings_api);
  CHECK(api.embed(texts) == std::vector<Embedding>{{1, 2}, {3, 2}});
  CHECK(api.backend_id() != native.backend_id());
}

TEST_CASE("logprob adapters") {
  FakeService svc;
  svc.server().Post("/score", [](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    CHECK(body["model"] == "lm");
    CHECK(body["context"] == "Q: hi\nA:");
    reply(res, {{"tokens", {" hello", " there"}}, {"logprobs", {-0.5, -1.5}}, {"truncated", true}});
  });
  svc.server().Post("/v1/completions", [](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    CHECK(body["echo"] == true);
    CHECK(body["max_tokens"] == 0);
    CHECK(body["prompt"] == "Q: hi\nA: hello there");
    json lp{{"tokens", {"Q", ":", " hi", "\n", "A", ":", " hello", " there"}},
            {"token_logprobs", {nullptr, -3.0, -2.0, -1.0, -0.1, -0.2, -0.5, -1.5}},
            {"text_offset", {0, 1, 2, 5, 6, 7, 8, 14}}};
    reply(res, {{"choices", {{{"logprobs", lp}}}}});
  });
  svc.server().Post("/broken", [](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("overloaded", "text/plain");
  });

  HttpLogprobBackend native(Endpoint::parse(svc.url("/score")), "lm");
  auto a = native.score("Q: hi\nA:", " hello there");
  REQUIRE(a.tokens.size() == 2);
  CHECK(a.tokens[1].logprob == -1.5);
  CHECK(a.truncated);

  HttpLogprobBackend completions(Endpoint::parse(svc.url("/v1/completions")), "lm", HttpLogprobBackend::Shape::completions);
  auto b = completions.score("Q: hi\nA:", " hello there");
  REQUIRE(b.tokens.size() == 2);
  CHECK(b.tokens[0].token == " hello");
  CHECK(b.tokens[0].logprob == -0.5);

  HttpLogprobBackend broken(Endpoint::parse(svc.url("/broken")), "lm");
  try {
    broken.score("x", "y");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::backend);
    CHECK(std::string(e.what()).find("503") != std::string::npos);
  }
}

TEST_CASE("complexity adapters") {
  FakeService svc;
  svc.server().Post("/complexity", [](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    reply(res, {{"score", 1.0 + double(body["instruction"].get<std::string>().size() % 5)}});
  });
  svc.server().Post("/logits", [](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    CHECK(body["system"] == ComplexityPrompt::kSystem);
    CHECK(body["prompt"] == "##Query:\nwrite a poem\n\n##Complexity:\n");
    reply(res, {{"logits", {0, 0, 0, 0, 0, 0}}});
  });
  HttpComplexityBackend native(Endpoint::parse(svc.url("/complexity")), "scorer");
  CHECK(native.complexity("abc") == 4.0);
  HttpComplexityBackend logits(Endpoint::parse(svc.url("/logits")), "scorer", HttpComplexityBackend::Shape::numeral_logits);
  CHECK(logits.complexity("write a poem") == doctest::Approx(3.5));
}

TEST_CASE("judge adapter") {
  FakeService svc;
  svc.server().Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
    auto body = json::parse(req.body);
    CHECK(body["messages"][0]["content"] == JudgePrompt::kSystem);
    CHECK(body["messages"][1]["content"].get<std::string>().find("[Question]\nwhy?") == 0);
    reply(res, {{"choices", {{{"message", {{"role", "assistant"}, {"content", "7 5\nfine"}}}}}}});
  });
  HttpJudgeBackend judge(Endpoint::parse(svc.url("/v1/chat/completions")), "judge-model");
  CHECK(judge.complete({"why?", "because", "no"}) == "7 5\nfine");
}

TEST_CASE("unreachable service is a backend error") {
  HttpOptions opts;
  opts.timeout = std::chrono::seconds(2);
  HttpEmbeddingBackend be(Endpoint::parse("http://127.0.0.1:9/none"), "x", HttpEmbeddingBackend::Shape::native, opts);
  std::vector<std::string> texts{"a"};
  try {
    be.embed(texts);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::backend);
  }
}
