#include "curate/http_backends.hpp"

#include <httplib.h>

#include <algorithm>

#include "curate/error.hpp"

namespace curate {

Endpoint Endpoint::parse(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorKind::config, "endpoint '" + url + "' lacks a scheme");
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") fail(ErrorKind::config, "endpoint '" + url + "': unsupported scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  e.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (e.origin.size() <= scheme_end + 3) fail(ErrorKind::config, "endpoint '" + url + "' lacks a host");
  return e;
}

nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body, const HttpOptions& opts) {
  httplib::Client client(endpoint.origin);
  client.set_connection_timeout(opts.timeout);
  client.set_read_timeout(opts.timeout);
  client.set_write_timeout(opts.timeout);
  httplib::Headers headers;
  if (!opts.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts.api_key);
  auto res = client.Post(endpoint.path, headers, body.dump(), "application/json");
  const auto where = endpoint.origin + endpoint.path;
  if (!res) fail(ErrorKind::backend, where + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    fail(ErrorKind::backend, where + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 200));
  }
  auto doc = nlohmann::json::parse(res->body, nullptr, false);
  if (doc.is_discarded()) fail(ErrorKind::backend, where + ": reply is not JSON");
  return doc;
}

namespace {

template <typename Fn>
auto read_reply(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::backend, what + ": unexpected reply shape (" + e.what() + ")");
  }
}

}  // namespace

// ---- embeddings -----------------------------------------------------------------------------------

HttpEmbeddingBackend::HttpEmbeddingBackend(Endpoint endpoint, std::string model, Shape shape, HttpOptions opts)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), shape_(shape), opts_(std::move(opts)) {}

std::string HttpEmbeddingBackend::backend_id() const {
  return "http-embed:" + model_ + (shape_ == Shape::native ? "" : ":embeddings-api");
}

std::vector<Embedding> HttpEmbeddingBackend::embed(std::span<const std::string> texts) {
  const std::vector<std::string> batch(texts.begin(), texts.end());
  if (shape_ == Shape::native) {
    auto reply = post_json(endpoint_, {{"model", model_}, {"texts", batch}}, opts_);
    return read_reply("embedding service", [&] { return reply.at("vectors").get<std::vector<Embedding>>(); });
  }
  auto reply = post_json(endpoint_, {{"model", model_}, {"input", batch}}, opts_);
  return read_reply("embedding service", [&] {
    std::vector<Embedding> out(batch.size());
    for (const auto& item : reply.at("data")) {
      const auto i = item.at("index").get<std::size_t>();
      if (i >= out.size()) fail(ErrorKind::backend, "embedding service: index out of range");
      out[i] = item.at("embedding").get<Embedding>();
    }
    return out;
  });
}

// ---- logprobs -------------------------------------------------------------------------------------

HttpLogprobBackend::HttpLogprobBackend(Endpoint endpoint, std::string model, Shape shape, HttpOptions opts)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), shape_(shape), opts_(std::move(opts)) {}

std::string HttpLogprobBackend::backend_id() const {
  return "http-logprob:" + model_ + (shape_ == Shape::native ? "" : ":completions");
}

ScoredContinuation HttpLogprobBackend::score(const std::string& context, const std::string& continuation) {
  ScoredContinuation out;
  if (shape_ == Shape::native) {
    auto reply = post_json(endpoint_, {{"model", model_}, {"context", context}, {"continuation", continuation}}, opts_);
    read_reply("logprob service", [&] {
      const auto& tokens = reply.at("tokens");
      const auto& logprobs = reply.at("logprobs");
      if (tokens.size() != logprobs.size()) fail(ErrorKind::backend, "logprob service: tokens/logprobs length mismatch");
      for (std::size_t i = 0; i < tokens.size(); ++i) out.tokens.push_back({tokens[i].get<std::string>(), logprobs[i].get<double>()});
      out.truncated = reply.value("truncated", false);
      return 0;
    });
    return out;
  }
  const nlohmann::json body{{"model", model_}, {"prompt", context + continuation}, {"max_tokens", 0},
                            {"echo", true},     {"logprobs", 1},                    {"temperature", 0}};
  auto reply = post_json(endpoint_, body, opts_);
  read_reply("completions service", [&] {
    const auto& lp = reply.at("choices").at(0).at("logprobs");
    const auto& tokens = lp.at("tokens");
    const auto& values = lp.at("token_logprobs");
    const auto& offsets = lp.at("text_offset");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (offsets[i].get<std::size_t>() < context.size()) continue;
      if (values[i].is_null()) fail(ErrorKind::backend, "completions service: missing logprob inside continuation");
      out.tokens.push_back({tokens[i].get<std::string>(), values[i].get<double>()});
    }
    return 0;
  });
  return out;
}

// ---- complexity -----------------------------------------------------------------------------------

HttpComplexityBackend::HttpComplexityBackend(Endpoint endpoint, std::string model, Shape shape, HttpOptions opts)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), shape_(shape), opts_(std::move(opts)) {}

std::string HttpComplexityBackend::backend_id() const {
  return "http-complexity:" + model_ + (shape_ == Shape::native ? "" : ":numeral-logits");
}

double HttpComplexityBackend::complexity(const std::string& instruction) {
  if (shape_ == Shape::native) {
    auto reply = post_json(endpoint_, {{"model", model_}, {"instruction", instruction}}, opts_);
    return read_reply("complexity service", [&] { return reply.at("score").get<double>(); });
  }
  auto reply = post_json(endpoint_,
                         {{"model", model_}, {"system", ComplexityPrompt::kSystem}, {"prompt", ComplexityPrompt::user(instruction)}},
                         opts_);
  return read_reply("complexity service", [&] {
    const auto logits = reply.at("logits").get<std::vector<double>>();
    if (logits.size() != 6) fail(ErrorKind::backend, "complexity service: expected 6 numeral logits");
    return expected_complexity(std::span<const double, 6>(logits.data(), 6));
  });
}

// ---- judge ----------------------------------------------------------------------------------------

HttpJudgeBackend::HttpJudgeBackend(Endpoint endpoint, std::string model, HttpOptions opts)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), opts_(std::move(opts)) {}

std::string HttpJudgeBackend::backend_id() const { return "http-judge:" + model_; }

std::string HttpJudgeBackend::complete(const JudgePrompt& prompt) {
  const nlohmann::json body{{"model", model_},
                            {"temperature", 0},
                            {"messages",
                             {{{"role", "system"}, {"content", JudgePrompt::kSystem}},
                              {{"role", "user"}, {"content", prompt.user()}}}}};
  auto reply = post_json(endpoint_, body, opts_);
  return read_reply("judge service",
                    [&] { return reply.at("choices").at(0).at("message").at("content").get<std::string>(); });
}

}  // namespace curate
