#include "curate/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "curate/error.hpp"
#include "curate/hashing.hpp"

namespace curate {

void SelectionConfig::validate() const {
  if (budget_k.has_value() == budget_fraction.has_value()) {
    fail(ErrorKind::config, "selection: set exactly one of budget_k and budget_fraction");
  }
  if (budget_k && *budget_k == 0) fail(ErrorKind::config, "selection: budget_k must be positive");
  if (budget_fraction && !(*budget_fraction > 0.0 && *budget_fraction <= 1.0)) {
    fail(ErrorKind::config, "selection: budget_fraction must be in (0, 1]");
  }
  if (!(tau > 0.0 && tau <= 1.0)) fail(ErrorKind::config, "selection: tau must be in (0, 1]");
}

std::string to_string(SkipReason r) {
  switch (r) {
    case SkipReason::similar_to: return "similar_to";
    case SkipReason::budget_reached: return "budget_reached";
    case SkipReason::no_score: return "no_score";
  }
  return "unknown";
}

std::size_t budget_resolve(const SelectionConfig& cfg, std::size_t corpus_size) {
  if (corpus_size == 0) fail(ErrorKind::invalid_input, "budget: empty corpus");
  cfg.validate();
  std::size_t k = 0;
  if (cfg.budget_k) {
    k = *cfg.budget_k;
  } else {
    k = static_cast<std::size_t>(std::llround(*cfg.budget_fraction * static_cast<double>(corpus_size)));
    k = std::max<std::size_t>(k, 1);
  }
  if (k == 0) fail(ErrorKind::config, "budget resolves to 0");
  return k;
}

SelectionResult select(std::span<const InfluenceRecord> records, const EmbeddingIndex& index, const SelectionConfig& cfg) {
  if (records.empty()) fail(ErrorKind::invalid_input, "select: no records");
  if (!(cfg.tau > 0.0)) fail(ErrorKind::config, "select: tau must be positive");
  SelectionResult out;
  out.budget = budget_resolve(cfg, records.size());
  if (out.budget > records.size()) {
    fail(ErrorKind::config, "select: budget " + std::to_string(out.budget) + " exceeds corpus of " +
                                std::to_string(records.size()));
  }

  std::vector<const InfluenceRecord*> order;
  for (const auto& r : records) {
    if (!index.contains(r.candidate_id)) fail(ErrorKind::invalid_input, "select: '" + r.candidate_id + "' is not indexed");
    if (r.scored()) {
      order.push_back(&r);
    } else {
      out.skipped.push_back({r.candidate_id, SkipReason::no_score, {}, 0.0});
    }
  }
  std::sort(order.begin(), order.end(), [](const InfluenceRecord* a, const InfluenceRecord* b) {
    if (a->wici != b->wici) return a->wici > b->wici;
    return a->candidate_id < b->candidate_id;
  });

  std::vector<const InfluenceRecord*> similar_skips;
  for (const auto* r : order) {
    if (out.selected_ids.size() >= out.budget) {
      out.skipped.push_back({r->candidate_id, SkipReason::budget_reached, {}, 0.0});
      continue;
    }
    const auto v = index.vector(r->candidate_id);
    bool admitted = true;
    for (const auto& chosen : out.selected_ids) {
      const double cos = cosine_similarity(v, index.vector(chosen));
      if (cos >= cfg.tau) {
        out.skipped.push_back({r->candidate_id, SkipReason::similar_to, chosen, cos});
        similar_skips.push_back(r);
        admitted = false;
        break;
      }
    }
    if (admitted) out.selected_ids.push_back(r->candidate_id);
  }

  if (cfg.backfill) {
    for (const auto* r : similar_skips) {
      if (out.selected_ids.size() >= out.budget) break;
      out.selected_ids.push_back(r->candidate_id);
      out.backfilled.push_back(r->candidate_id);
    }
  }
  out.achieved_k = out.selected_ids.size();
  return out;
}

nlohmann::json to_json(const SelectionConfig& cfg) {
  nlohmann::json j{{"tau", cfg.tau}, {"backfill", cfg.backfill}};
  j["budget_k"] = cfg.budget_k ? nlohmann::json(*cfg.budget_k) : nlohmann::json(nullptr);
  j["budget_fraction"] = cfg.budget_fraction ? nlohmann::json(*cfg.budget_fraction) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const SelectionResult& r) {
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& s : r.skipped) {
    nlohmann::json e{{"id", s.id}, {"reason", to_string(s.reason)}};
    if (s.reason == SkipReason::similar_to) {
      e["similar_to"] = s.similar_to;
      e["similarity"] = s.similarity;
    }
    skipped.push_back(std::move(e));
  }
  return {{"selected_ids", r.selected_ids}, {"skipped", skipped}, {"backfilled", r.backfilled},
          {"budget", r.budget},             {"achieved_k", r.achieved_k}};
}

SelectionResult selection_result_from_json(const nlohmann::json& j) {
  SelectionResult r;
  r.selected_ids = j.at("selected_ids").get<std::vector<std::string>>();
  r.backfilled = j.at("backfilled").get<std::vector<std::string>>();
  r.budget = j.at("budget").get<std::size_t>();
  r.achieved_k = j.at("achieved_k").get<std::size_t>();
  for (const auto& e : j.at("skipped")) {
    SkipEntry s;
    s.id = e.at("id").get<std::string>();
    const auto reason = e.at("reason").get<std::string>();
    s.reason = reason == "similar_to" ? SkipReason::similar_to
               : reason == "budget_reached" ? SkipReason::budget_reached
                                            : SkipReason::no_score;
    if (s.reason == SkipReason::similar_to) {
      s.similar_to = e.at("similar_to").get<std::string>();
      s.similarity = e.at("similarity").get<double>();
    }
    r.skipped.push_back(std::move(s));
  }
  return r;
}

std::filesystem::path export_coreset(const SelectionResult& result, const Corpus& corpus, const std::filesystem::path& path,
                                     const nlohmann::json& run_info) {
  std::vector<Sample> chosen;
  chosen.reserve(result.selected_ids.size());
  for (const auto& id : result.selected_ids) chosen.push_back(corpus.at(id));
  write_records(chosen, path);

  std::map<std::string, std::size_t> counts{{"similar_to", 0}, {"budget_reached", 0}, {"no_score", 0}};
  for (const auto& s : result.skipped) ++counts[to_string(s.reason)];
  nlohmann::json manifest = run_info.is_object() ? run_info : nlohmann::json::object();
  manifest["source_digest"] = corpus.source_digest();
  manifest["coreset_digest"] = sha256_file(path);
  manifest["budget"] = result.budget;
  manifest["achieved_k"] = result.achieved_k;
  manifest["skip_counts"] = counts;
  manifest["backfilled"] = result.backfilled;

  auto manifest_path = path.parent_path() / (path.stem().string() + ".manifest.json");
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorKind::io, "write failed for " + manifest_path.string());
  return manifest_path;
}

}  // namespace curate
