#include "curate/difficulty.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "curate/error.hpp"
#include "curate/hashing.hpp"

namespace curate {

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool truncate_context_left(std::vector<std::string>& context_tokens, std::size_t continuation_tokens,
                           std::size_t max_tokens) {
  const std::size_t room = max_tokens > continuation_tokens ? max_tokens - continuation_tokens : 0;
  if (context_tokens.size() <= room) return false;
  context_tokens.erase(context_tokens.begin(), context_tokens.end() - static_cast<std::ptrdiff_t>(room));
  return true;
}

// ---- table backend ----------------------------------------------------------------------------------

TableLogprobBackend::TableLogprobBackend(std::string backend_id, std::vector<Rule> rules,
                                         std::map<std::string, std::vector<double>> tables,
                                         std::optional<std::string> default_class)
    : backend_id_(std::move(backend_id)),
      rules_(std::move(rules)),
      tables_(std::move(tables)),
      default_class_(std::move(default_class)) {
  for (const auto& r : rules_) {
    if (!tables_.contains(r.cls)) fail(ErrorKind::config, "logprob table: rule refers to unknown class '" + r.cls + "'");
  }
  if (default_class_ && !tables_.contains(*default_class_)) {
    fail(ErrorKind::config, "logprob table: unknown default class '" + *default_class_ + "'");
  }
}

std::unique_ptr<TableLogprobBackend> TableLogprobBackend::from_json(const nlohmann::json& doc) {
  std::vector<Rule> rules;
  for (const auto& r : doc.value("rules", nlohmann::json::array())) {
    Rule rule;
    rule.cls = r.at("class").get<std::string>();
    if (r.contains("context_equals")) {
      rule.match = Rule::Match::equals;
      rule.pattern = r["context_equals"].get<std::string>();
    } else if (r.contains("context_contains")) {
      rule.match = Rule::Match::contains;
      rule.pattern = r["context_contains"].get<std::string>();
    } else if (r.value("context_empty", false)) {
      rule.match = Rule::Match::empty;
    } else {
      fail(ErrorKind::config, "logprob table: rule needs context_equals, context_contains or context_empty");
    }
    rules.push_back(std::move(rule));
  }
  std::optional<std::string> default_class;
  if (doc.contains("default_class")) default_class = doc["default_class"].get<std::string>();
  return std::make_unique<TableLogprobBackend>(doc.value("backend_id", "table"), std::move(rules),
                                               doc.at("classes").get<std::map<std::string, std::vector<double>>>(),
                                               default_class);
}

std::unique_ptr<TableLogprobBackend> TableLogprobBackend::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open logprob table " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) fail(ErrorKind::config, "malformed logprob table " + path.string());
  if (!doc.contains("backend_id")) doc["backend_id"] = "table";
  doc["backend_id"] = doc["backend_id"].get<std::string>() + ":" + sha256_file(path).substr(0, 16);
  return from_json(doc);
}

nlohmann::json TableLogprobBackend::to_json() const {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : rules_) {
    switch (r.match) {
      case Rule::Match::equals: rules.push_back({{"context_equals", r.pattern}, {"class", r.cls}}); break;
      case Rule::Match::contains: rules.push_back({{"context_contains", r.pattern}, {"class", r.cls}}); break;
      case Rule::Match::empty: rules.push_back({{"context_empty", true}, {"class", r.cls}}); break;
    }
  }
  nlohmann::json doc{{"backend_id", backend_id_}, {"rules", rules}, {"classes", tables_}};
  if (default_class_) doc["default_class"] = *default_class_;
  return doc;
}

ScoredContinuation TableLogprobBackend::score(const std::string& context, const std::string& continuation) {
  ++calls_;
  const std::string* cls = nullptr;
  for (const auto& r : rules_) {
    const bool hit = (r.match == Rule::Match::equals && context == r.pattern) ||
                     (r.match == Rule::Match::contains && context.find(r.pattern) != std::string::npos) ||
                     (r.match == Rule::Match::empty && context.empty());
    if (hit) {
      cls = &r.cls;
      break;
    }
  }
  if (!cls && default_class_) cls = &*default_class_;
  if (!cls) fail(ErrorKind::backend, "logprob table: no class matches the context");
  const auto& table = tables_.at(*cls);
  auto tokens = whitespace_tokens(continuation);
  if (tokens.size() > table.size()) {
    fail(ErrorKind::backend, "logprob table: class '" + *cls + "' has " + std::to_string(table.size()) +
                                 " entries for a " + std::to_string(tokens.size()) + "-token continuation");
  }
  ScoredContinuation out;
  for (std::size_t i = 0; i < tokens.size(); ++i) out.tokens.push_back({std::move(tokens[i]), table[i]});
  return out;
}

// ---- synthetic backend ------------------------------------------------------------------------------

std::string SyntheticLogprobBackend::backend_id() const {
  return std::string("mock-logprob-synth-") + (context_sensitive_ ? "ctx" : "noctx") + "-s" + std::to_string(seed_) +
         "-max" + std::to_string(max_tokens_);
}

ScoredContinuation SyntheticLogprobBackend::score(const std::string& context, const std::string& continuation) {
  ++calls_;
  auto cont = whitespace_tokens(continuation);
  auto ctx = whitespace_tokens(context);
  ScoredContinuation out;
  out.truncated = truncate_context_left(ctx, cont.size(), max_tokens_);
  const std::set<std::string> seen(ctx.begin(), ctx.end());
  for (auto& tok : cont) {
    const double u = static_cast<double>(substream_seed(seed_, "synthetic-token", tok) >> 11) * 0x1.0p-53;
    double surprisal = 0.2 + 4.0 * u;
    if (context_sensitive_ && seen.contains(tok)) surprisal *= 0.5;
    out.tokens.push_back({std::move(tok), -surprisal});
  }
  return out;
}

// ---- scorer -------------------------------------------------------------------------------------------

DifficultyScorer::DifficultyScorer(LogprobBackend& backend, PromptTemplate tmpl, ScoringOptions opts)
    : backend_(backend), template_(std::move(tmpl)), opts_(std::move(opts)), backend_id_(backend.backend_id()) {}

ScoredContinuation DifficultyScorer::fetch(const std::string& context, const std::string& continuation) {
  const nlohmann::json request{{"op", "logprob"},
                               {"backend", backend_id_},
                               {"context_sha256", sha256_hex(context)},
                               {"continuation_sha256", sha256_hex(continuation)}};
  const auto key = ContentCache::key_for(request);

  std::promise<ScoredContinuation> promise;
  {
    std::unique_lock lock(mu_);
    if (auto it = inflight_.find(key); it != inflight_.end()) {
      auto shared = it->second;
      lock.unlock();
      ++hits_;
      return shared.get();
    }
    inflight_.emplace(key, promise.get_future().share());
  }

  try {
    if (opts_.cache) {
      if (auto hit = opts_.cache->get(key)) {
        ScoredContinuation sc;
        sc.truncated = hit->value("truncated", false);
        const auto& toks = hit->at("tokens");
        const auto& lps = hit->at("logprobs");
        for (std::size_t i = 0; i < toks.size(); ++i) sc.tokens.push_back({toks[i].get<std::string>(), lps[i].get<double>()});
        ++hits_;
        promise.set_value(sc);
        return sc;
      }
    }
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= opts_.max_retries; ++attempt) {
      try {
        ++calls_;
        auto sc = backend_.score(context, continuation);
        if (opts_.cache) {
          nlohmann::json toks = nlohmann::json::array(), lps = nlohmann::json::array();
          for (const auto& t : sc.tokens) {
            toks.push_back(t.token);
            lps.push_back(t.logprob);
          }
          opts_.cache->put(key, {{"tokens", toks}, {"logprobs", lps}, {"truncated", sc.truncated}});
        }
        promise.set_value(sc);
        return sc;
      } catch (const std::exception& e) {
        last_error = e.what();
      }
    }
    fail(ErrorKind::backend, "logprob backend failed after " + std::to_string(opts_.max_retries + 1) +
                                 " attempts: " + last_error);
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    inflight_.erase(key);
    throw;
  }
}

Perplexity DifficultyScorer::perplexity(const std::string& context, const std::string& continuation) {
  if (continuation.empty()) fail(ErrorKind::invalid_input, "perplexity: empty continuation");
  const auto sc = fetch(context, continuation);
  if (sc.tokens.empty()) fail(ErrorKind::backend, "perplexity: continuation has no tokens");
  Perplexity out;
  out.token_count = sc.tokens.size();
  out.truncated = sc.truncated;
  for (const auto& t : sc.tokens) {
    if (!std::isfinite(t.logprob)) fail(ErrorKind::backend, "perplexity: non-finite logprob for token '" + t.token + "'");
    out.sum_logprob += t.logprob;
  }
  out.ppl = std::exp(-out.sum_logprob / static_cast<double>(out.token_count));
  return out;
}

Perplexity DifficultyScorer::conditioned(const Sample& sample) {
  return perplexity(render_zero_shot(template_, sample), sample.response);
}

Perplexity DifficultyScorer::unconditioned(const Sample& sample) {
  return perplexity(opts_.unconditioned_context, sample.response);
}

DifficultyRecord DifficultyScorer::ifd(const Sample& sample) {
  const auto cond = conditioned(sample);
  const auto uncond = unconditioned(sample);
  DifficultyRecord r;
  r.sample_id = sample.id;
  r.ppl_conditioned = cond.ppl;
  r.ppl_unconditioned = uncond.ppl;
  r.ifd = cond.ppl / uncond.ppl;
  r.response_token_count = cond.token_count;
  r.truncated = cond.truncated || uncond.truncated;
  return r;
}

double DifficultyScorer::ifd_with_demo(const Sample& demo, const Sample& target) {
  const auto with_demo = perplexity(render_one_shot(template_, demo, target), target.response);
  return with_demo.ppl / unconditioned(target).ppl;
}

double DifficultyScorer::corpus_nll(const Corpus& corpus) {
  if (corpus.empty()) fail(ErrorKind::invalid_input, "corpus_nll: empty corpus");
  double total = 0.0;
  for (const auto& s : corpus.samples()) total += -conditioned(s).sum_logprob;
  return total / static_cast<double>(corpus.size());
}

}  // namespace curate
