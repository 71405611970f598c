#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "curate/corpus.hpp"
#include "curate/difficulty.hpp"
#include "curate/embedding.hpp"
#include "curate/probes.hpp"

namespace curate {

struct ProbeInfluence {
  SampleId probe_id;
  double ifd_base = 0.0;
  double ifd_with_demo = 0.0;
  double ici = 0.0;
  double cos_sim = 0.0;
  double weight = 0.0;
};

struct InfluenceRecord {
  SampleId candidate_id;
  std::vector<ProbeInfluence> per_probe;
  double wici = 0.0;
  std::size_t clamped_cosines = 0;
  std::vector<std::string> flags;
  std::optional<std::string> skip_reason;  // set when the candidate was not scored

  bool scored() const noexcept { return !skip_reason.has_value(); }
  // Plain mean of per-probe ICI (all weights 1/|B|).
  double unweighted_ici() const;
};

// Reduction in a probe's difficulty when the candidate is shown as a demonstration.
// Positive: the demonstration helps; negative: it hurts.
double ici_single(double ifd_base, double ifd_with_demo);

struct ProbeObservation {
  SampleId probe_id;
  double ici = 0.0;
  double cos_sim = 0.0;
};

// Cosines within this distance outside [-1, 1] are floating noise and get clamped.
inline constexpr double kCosineClampTolerance = 1e-9;

// Aggregates per-probe ICI with weight (1 - cos) / (2|B|). Weights are not renormalized.
InfluenceRecord wici(const SampleId& candidate_id, std::span<const ProbeObservation> probes);

// Scores one candidate against its probes. Cold cache: 3|B| + 1 backend calls at most
// (probe conditioned, probe unconditioned, probe with demo, candidate conditioned).
InfluenceRecord score_candidate(const Sample& candidate, const ProbeSet& probes, const Corpus& corpus,
                                DifficultyScorer& scorer, const EmbeddingIndex& index);

struct ScoreOptions {
  std::size_t max_in_flight = 4;
  std::optional<double> drop_ifd_above;
};

struct CorpusScores {
  std::vector<InfluenceRecord> records;            // ascending candidate id
  std::map<SampleId, DifficultyRecord> difficulty;  // every sample
  std::size_t base_calls = 0;                       // corpus-wide IFD pass
  std::size_t demo_calls = 0;                       // demonstration pass
};

// Computes IFD for every sample once, then scores each candidate against its probe set.
CorpusScores score_corpus(const Corpus& corpus, const std::map<SampleId, ProbeSet>& probe_sets,
                          DifficultyScorer& scorer, const EmbeddingIndex& index, const ScoreOptions& opts = {});

nlohmann::json to_json(const InfluenceRecord& r);
InfluenceRecord influence_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DifficultyRecord& r);
DifficultyRecord difficulty_record_from_json(const nlohmann::json& j);

// candidate_id, wici, n_probes, min_ici, max_ici, flags
void write_score_table(std::span<const InfluenceRecord> records, const std::filesystem::path& path);
void write_jsonl(const std::vector<nlohmann::json>& rows, const std::filesystem::path& path);
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace curate
