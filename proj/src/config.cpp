#include "curate/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "curate/error.hpp"

namespace curate {

namespace fs = std::filesystem;
using nlohmann::json;

nlohmann::json BackendSpec::to_json() const {
  json j{{"kind", kind}};
  if (!endpoint.empty()) j["endpoint"] = endpoint;
  if (!model.empty()) j["model"] = model;
  if (!shape.empty()) j["shape"] = shape;
  if (!path.empty()) j["path"] = path.string();
  return j;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

BackendSpec backend_from(const json& doc, const char* name, const fs::path& base) {
  BackendSpec b;
  if (!doc.contains("backends") || !doc["backends"].contains(name)) return b;
  const auto& j = doc["backends"][name];
  if (j.is_string()) {
    b.kind = j.get<std::string>();
    return b;
  }
  b.kind = j.value("kind", "mock");
  b.endpoint = j.value("endpoint", "");
  b.model = j.value("model", "");
  b.shape = j.value("shape", "");
  b.path = resolve(base, j.value("path", ""));
  return b;
}

void env_override(std::string& target, const char* var) {
  if (const char* v = std::getenv(var); v && *v) target = v;
}

template <typename T>
T get_or(const json& doc, const char* key, T fallback) {
  try {
    return doc.contains(key) && !doc[key].is_null() ? doc[key].get<T>() : fallback;
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("config: field \"") + key + "\": " + e.what());
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) fail(ErrorKind::config, "config: top level must be an object");
  static const std::set<std::string> known{
      "corpus",      "id_policy",      "char_budget",      "template",  "embed_text",   "backends",
      "judge",       "n_neighbors",    "k_clusters",       "cluster_on_normalized",    "tau",
      "budget_k",    "budget_fraction", "backfill",        "seed",      "cache_dir",    "output_dir",
      "max_in_flight", "max_retries",  "batch_size",       "max_tokens", "drop_ifd_above",
      "unconditioned_context"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) fail(ErrorKind::config, "config: unknown field \"" + key + "\"");
  }

  PipelineConfig c;
  c.corpus = resolve(base_dir, get_or<std::string>(doc, "corpus", ""));
  const auto policy = get_or<std::string>(doc, "id_policy", "use_field");
  if (policy != "use_field" && policy != "hash") fail(ErrorKind::config, "config: id_policy must be use_field or hash");
  c.id_policy = policy == "hash" ? IdPolicy::hash : IdPolicy::use_field;
  c.char_budget = get_or<std::size_t>(doc, "char_budget", c.char_budget);

  if (doc.contains("template")) {
    const auto& t = doc["template"];
    if (t.is_string()) {
      if (t.get<std::string>() != "alpaca") fail(ErrorKind::config, "config: unknown template '" + t.get<std::string>() + "'");
    } else {
      auto zero = get_or<std::string>(t, "zero_shot_form", "");
      auto prefix = get_or<std::string>(t, "response_prefix", "");
      c.prompt_template = PromptTemplate::from_zero_shot(zero, prefix);
      if (t.contains("one_shot_form")) c.prompt_template.one_shot_form = t["one_shot_form"].get<std::string>();
    }
  }
  c.embed_text = get_or<std::string>(doc, "embed_text", c.embed_text);

  c.embed = backend_from(doc, "embed", base_dir);
  c.logprob = backend_from(doc, "logprob", base_dir);
  c.complexity = backend_from(doc, "complexity", base_dir);
  c.judge_backend = backend_from(doc, "judge", base_dir);
  if (doc.contains("judge") && !doc["judge"].is_null()) {
    const auto& j = doc["judge"];
    JudgeSpec spec;
    spec.answers_a = resolve(base_dir, get_or<std::string>(j, "answers_a", ""));
    spec.answers_b = resolve(base_dir, get_or<std::string>(j, "answers_b", ""));
    spec.instructions = resolve(base_dir, get_or<std::string>(j, "instructions", ""));
    c.judge = spec;
  }

  c.n_neighbors = get_or<std::size_t>(doc, "n_neighbors", c.n_neighbors);
  c.k_clusters = get_or<std::size_t>(doc, "k_clusters", c.k_clusters);
  c.cluster_on_normalized = get_or<bool>(doc, "cluster_on_normalized", c.cluster_on_normalized);
  c.tau = get_or<double>(doc, "tau", c.tau);
  if (doc.contains("budget_k") && !doc["budget_k"].is_null()) {
    c.budget_k = get_or<std::size_t>(doc, "budget_k", 0);
    c.budget_fraction.reset();
  }
  if (doc.contains("budget_fraction") && !doc["budget_fraction"].is_null()) {
    c.budget_fraction = get_or<double>(doc, "budget_fraction", 0.0);
  }
  c.backfill = get_or<bool>(doc, "backfill", c.backfill);
  if (!doc.contains("seed") || !doc["seed"].is_number_integer()) fail(ErrorKind::config, "config: integer \"seed\" is required");
  c.seed = doc["seed"].get<std::uint64_t>();

  c.cache_dir = resolve(base_dir, get_or<std::string>(doc, "cache_dir", "cache"));
  c.output_dir = resolve(base_dir, get_or<std::string>(doc, "output_dir", "out"));
  c.max_in_flight = get_or<std::size_t>(doc, "max_in_flight", c.max_in_flight);
  c.max_retries = get_or<std::size_t>(doc, "max_retries", c.max_retries);
  c.batch_size = get_or<std::size_t>(doc, "batch_size", c.batch_size);
  c.max_tokens = get_or<std::size_t>(doc, "max_tokens", c.max_tokens);
  if (doc.contains("drop_ifd_above") && !doc["drop_ifd_above"].is_null()) c.drop_ifd_above = get_or<double>(doc, "drop_ifd_above", 0.0);
  c.unconditioned_context = get_or<std::string>(doc, "unconditioned_context", "");
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open config " + path.string());
  auto doc = json::parse(in, nullptr, /*allow_exceptions=*/false, /*ignore_comments=*/true);
  if (doc.is_discarded()) fail(ErrorKind::config, "config " + path.string() + " is not valid JSON");
  auto c = from_json(doc, fs::absolute(path).parent_path());

  std::string cache = c.cache_dir.string();
  env_override(cache, "CURATE_CACHE_DIR");
  c.cache_dir = cache;
  env_override(c.embed.endpoint, "CURATE_EMBED_ENDPOINT");
  env_override(c.logprob.endpoint, "CURATE_LOGPROB_ENDPOINT");
  env_override(c.complexity.endpoint, "CURATE_COMPLEXITY_ENDPOINT");
  env_override(c.judge_backend.endpoint, "CURATE_JUDGE_ENDPOINT");
  env_override(c.api_key, "CURATE_API_KEY");
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  if (corpus.empty()) fail(ErrorKind::config, "config: \"corpus\" is required");
  if (!fs::exists(corpus)) fail(ErrorKind::config, "config: corpus " + corpus.string() + " does not exist");
  if (n_neighbors == 0) fail(ErrorKind::config, "config: n_neighbors must be positive");
  if (k_clusters == 0) fail(ErrorKind::config, "config: k_clusters must be positive");
  if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorKind::config, "config: tau must be in (0, 1]");
  if (budget_k.has_value() == budget_fraction.has_value()) fail(ErrorKind::config, "config: set exactly one of budget_k, budget_fraction");
  if (budget_fraction && !(*budget_fraction > 0.0 && *budget_fraction <= 1.0)) fail(ErrorKind::config, "config: budget_fraction must be in (0, 1]");
  if (budget_k && *budget_k == 0) fail(ErrorKind::config, "config: budget_k must be positive");
  if (max_in_flight == 0) fail(ErrorKind::config, "config: max_in_flight must be positive");
  if (batch_size == 0) fail(ErrorKind::config, "config: batch_size must be positive");
  if (embed_text != "prompt" && embed_text != "instruction") fail(ErrorKind::config, "config: embed_text must be prompt or instruction");
  prompt_template.validate();
  for (const auto* b : {&embed, &logprob, &complexity, &judge_backend}) {
    if (b->kind == "http" && b->endpoint.empty()) fail(ErrorKind::config, "config: http backend needs an endpoint");
  }
  if (logprob.kind == "table" && logprob.path.empty()) fail(ErrorKind::config, "config: table logprob backend needs a path");
  if (judge) {
    if (judge->answers_a.empty() || judge->answers_b.empty()) fail(ErrorKind::config, "config: judge needs answers_a and answers_b");
  }
}

}  // namespace curate
