#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "curate/corpus.hpp"
#include "curate/embedding.hpp"
#include "curate/influence.hpp"

namespace curate {

struct SelectionConfig {
  std::optional<std::size_t> budget_k;
  std::optional<double> budget_fraction;
  double tau = 0.9;
  bool backfill = false;

  void validate() const;
};

enum class SkipReason { similar_to, budget_reached, no_score };

std::string to_string(SkipReason r);

struct SkipEntry {
  SampleId id;
  SkipReason reason = SkipReason::no_score;
  SampleId similar_to;      // the selected item that blocked admission (similar_to only)
  double similarity = 0.0;  // its cosine to this candidate

  bool operator==(const SkipEntry&) const = default;
};

struct SelectionResult {
  std::vector<SampleId> selected_ids;  // descending wici, ties by ascending id; backfill appended last
  std::vector<SkipEntry> skipped;
  std::vector<SampleId> backfilled;    // admitted despite violating tau (backfill mode only)
  std::size_t budget = 0;
  std::size_t achieved_k = 0;

  bool operator==(const SelectionResult&) const = default;
};

// budget_k as given, or round(fraction * corpus_size) with a floor of 1.
std::size_t budget_resolve(const SelectionConfig& cfg, std::size_t corpus_size);

// Greedy scan in descending wici; admits a candidate iff its cosine to every already selected item
// is below tau, until the budget is filled.
SelectionResult select(std::span<const InfluenceRecord> records, const EmbeddingIndex& index, const SelectionConfig& cfg);

nlohmann::json to_json(const SelectionConfig& cfg);
nlohmann::json to_json(const SelectionResult& r);
SelectionResult selection_result_from_json(const nlohmann::json& j);

// Writes the selected samples in selection order using their source records, and a sidecar
// manifest `<stem>.manifest.json` carrying `run_info` plus digests, counts and achieved_k.
// Returns the manifest path.
std::filesystem::path export_coreset(const SelectionResult& result, const Corpus& corpus, const std::filesystem::path& path,
                                     const nlohmann::json& run_info = nlohmann::json::object());

}  // namespace curate
