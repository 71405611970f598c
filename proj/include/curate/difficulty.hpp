#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "curate/cache.hpp"
#include "curate/corpus.hpp"

namespace curate {

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
};

struct ScoredContinuation {
  std::vector<TokenLogprob> tokens;  // continuation tokens only
  bool truncated = false;            // context was cut from the left to fit the length limit
};

// Token log-probabilities of `continuation` given `context`. Must be thread-safe and
// deterministic for a fixed backend_id.
class LogprobBackend {
 public:
  virtual ~LogprobBackend() = default;
  virtual std::string backend_id() const = 0;
  virtual ScoredContinuation score(const std::string& context, const std::string& continuation) = 0;
};

std::vector<std::string> whitespace_tokens(const std::string& text);

// Keeps the continuation whole and drops context tokens from the left until the total fits.
// Returns true when anything was dropped.
bool truncate_context_left(std::vector<std::string>& context_tokens, std::size_t continuation_tokens,
                           std::size_t max_tokens);

// Fixture-driven backend: each context is mapped to a class by the first matching rule, and the
// class's table gives the log-prob of continuation token i. Tokens are whitespace-separated.
class TableLogprobBackend final : public LogprobBackend {
 public:
  struct Rule {
    enum class Match { equals, contains, empty } match = Match::equals;
    std::string pattern;
    std::string cls;
  };

  TableLogprobBackend(std::string backend_id, std::vector<Rule> rules, std::map<std::string, std::vector<double>> tables,
                      std::optional<std::string> default_class = std::nullopt);
  static std::unique_ptr<TableLogprobBackend> from_json(const nlohmann::json& doc);
  // The backend id gains the file's digest so an edited table never reuses cached scores.
  static std::unique_ptr<TableLogprobBackend> load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::string backend_id() const override { return backend_id_; }
  ScoredContinuation score(const std::string& context, const std::string& continuation) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::string backend_id_;
  std::vector<Rule> rules_;
  std::map<std::string, std::vector<double>> tables_;
  std::optional<std::string> default_class_;
  std::atomic<std::size_t> calls_{0};
};

// Hash-driven stand-in for a language model. Each token has a seeded base surprisal; with
// `context_sensitive`, tokens that also occur in the context cost half as much.
class SyntheticLogprobBackend final : public LogprobBackend {
 public:
  explicit SyntheticLogprobBackend(std::uint64_t seed, bool context_sensitive = true, std::size_t max_tokens = 2048)
      : seed_(seed), context_sensitive_(context_sensitive), max_tokens_(max_tokens) {}
  std::string backend_id() const override;
  ScoredContinuation score(const std::string& context, const std::string& continuation) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::uint64_t seed_;
  bool context_sensitive_;
  std::size_t max_tokens_;
  std::atomic<std::size_t> calls_{0};
};

struct Perplexity {
  double ppl = 1.0;
  std::size_t token_count = 0;
  double sum_logprob = 0.0;
  bool truncated = false;
};

struct DifficultyRecord {
  SampleId sample_id;
  double ppl_conditioned = 1.0;
  double ppl_unconditioned = 1.0;
  double ifd = 1.0;
  std::size_t response_token_count = 0;
  bool truncated = false;
};

struct ScoringOptions {
  ContentCache* cache = nullptr;
  std::size_t max_retries = 3;
  // Context for PPL(y). The empty string leaves only the backend's own begin marker.
  std::string unconditioned_context;
};

// Perplexity and instruction-following difficulty over a log-prob backend. Every distinct
// (context, continuation) pair reaches the backend at most once per scorer, even under
// concurrent use; results are shared through `ScoringOptions::cache` across runs.
class DifficultyScorer {
 public:
  DifficultyScorer(LogprobBackend& backend, PromptTemplate tmpl, ScoringOptions opts = {});

  Perplexity perplexity(const std::string& context, const std::string& continuation);

  DifficultyRecord ifd(const Sample& sample);
  Perplexity conditioned(const Sample& sample);
  Perplexity unconditioned(const Sample& sample);
  double ifd_with_demo(const Sample& demo, const Sample& target);
  // Mean over samples of the negated summed response log-prob.
  double corpus_nll(const Corpus& corpus);

  const PromptTemplate& prompt_template() const noexcept { return template_; }
  std::size_t backend_calls() const noexcept { return calls_; }
  std::size_t cache_hits() const noexcept { return hits_; }

 private:
  ScoredContinuation fetch(const std::string& context, const std::string& continuation);

  LogprobBackend& backend_;
  PromptTemplate template_;
  ScoringOptions opts_;
  std::string backend_id_;
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_future<ScoredContinuation>> inflight_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> hits_{0};
};

}  // namespace curate
