#pragma once

#include <chrono>
#include <string>
#include <vector>

#include <json.hpp>

#include "curate/analysis.hpp"
#include "curate/difficulty.hpp"
#include "curate/embedding.hpp"
#include "curate/probes.hpp"

namespace curate {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'

  static Endpoint parse(const std::string& url);
};

struct HttpOptions {
  std::chrono::seconds timeout{120};
  std::string api_key;  // sent as a bearer token when non-empty
};

// One POST with a JSON body; throws Error(backend) on transport failure, non-2xx status or a
// non-JSON reply.
nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body, const HttpOptions& opts = {});

// Native shape: {"model", "texts"} -> {"vectors"}. Embeddings-API shape: {"model", "input"} ->
// {"data": [{"index", "embedding"}]}.
class HttpEmbeddingBackend final : public EmbeddingBackend {
 public:
  enum class Shape { native, embeddings_api };
  HttpEmbeddingBackend(Endpoint endpoint, std::string model, Shape shape = Shape::native, HttpOptions opts = {});
  std::string backend_id() const override;
  std::vector<Embedding> embed(std::span<const std::string> texts) override;

 private:
  Endpoint endpoint_;
  std::string model_;
  Shape shape_;
  HttpOptions opts_;
};

// Native shape: {"model", "context", "continuation"} -> {"tokens", "logprobs"[, "truncated"]}.
// Completions shape: echoes context+continuation with prompt log-probs and keeps the tokens whose
// text offset falls inside the continuation.
class HttpLogprobBackend final : public LogprobBackend {
 public:
  enum class Shape { native, completions };
  HttpLogprobBackend(Endpoint endpoint, std::string model, Shape shape = Shape::native, HttpOptions opts = {});
  std::string backend_id() const override;
  ScoredContinuation score(const std::string& context, const std::string& continuation) override;

 private:
  Endpoint endpoint_;
  std::string model_;
  Shape shape_;
  HttpOptions opts_;
};

// Native shape: {"model", "instruction"} -> {"score"}. Numeral-logit shape: {"model", "system",
// "prompt"} -> {"logits": [l1..l6]}, decoded to the expected score.
class HttpComplexityBackend final : public ComplexityBackend {
 public:
  enum class Shape { native, numeral_logits };
  HttpComplexityBackend(Endpoint endpoint, std::string model, Shape shape = Shape::native, HttpOptions opts = {});
  std::string backend_id() const override;
  double complexity(const std::string& instruction) override;

 private:
  Endpoint endpoint_;
  std::string model_;
  Shape shape_;
  HttpOptions opts_;
};

// Chat-completions request with the judge system and user prompts; returns the message content.
class HttpJudgeBackend final : public JudgeBackend {
 public:
  HttpJudgeBackend(Endpoint endpoint, std::string model, HttpOptions opts = {});
  std::string backend_id() const override;
  std::string complete(const JudgePrompt& prompt) override;

 private:
  Endpoint endpoint_;
  std::string model_;
  HttpOptions opts_;
};

}  // namespace curate
