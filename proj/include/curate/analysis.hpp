#pragma once

#include <atomic>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "curate/cache.hpp"
#include "curate/corpus.hpp"
#include "curate/difficulty.hpp"
#include "curate/influence.hpp"

namespace curate {

// ---- rankings ---------------------------------------------------------------------------------------

struct Ranking {
  std::string metric_name;
  std::vector<SampleId> ordered_ids;  // descending value, ties by ascending id
  std::map<SampleId, double> values;

  static Ranking from_values(std::string metric_name, std::map<SampleId, double> values);
  // Ranking given only an order; values become -position so ties cannot occur.
  static Ranking from_order(std::string metric_name, std::vector<SampleId> ordered_ids);
};

// |top_m(r1) ∩ top_m(r2)| / m, m = round(p * n) with a floor of 1.
double overlap_ratio(const Ranking& r1, const Ranking& r2, double p);

// Pearson correlation of the average ranks of the two value maps.
double spearman(const Ranking& r1, const Ranking& r2);

// Average (1-based, ascending) ranks of `values`; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

inline constexpr double kOverlapCutoffs[] = {0.10, 0.30, 0.50};

struct ConsistencyReport {
  std::size_t n = 0;
  std::vector<std::pair<double, double>> overlaps;  // (cutoff, ratio)
  double spearman = 0.0;

  nlohmann::json to_json() const;
};

// IFD ranking against unweighted-ICI ranking over the scored candidates.
ConsistencyReport consistency(const std::map<SampleId, DifficultyRecord>& difficulty,
                              std::span<const InfluenceRecord> records);

// ---- pairwise judging -------------------------------------------------------------------------------

enum class Verdict { win_a, win_b, tie };
enum class Subject { a, b };

std::string to_string(Verdict v);

// Scores as returned by the judge, by display position: (first shown, second shown).
struct PositionalScores {
  double first = 0.0;
  double second = 0.0;
  bool operator==(const PositionalScores&) const = default;
};

struct PairwiseOutcome {
  SampleId instruction_id;
  PositionalScores order_ab;  // A shown first
  PositionalScores order_ba;  // B shown first
  Verdict verdict = Verdict::tie;
  bool parse_failure = false;
  std::string rationale_ab;
  std::string rationale_ba;
};

// A wins iff it scores at least B's score in both orders and strictly more in one; B symmetric.
Verdict decide_verdict(PositionalScores order_ab, PositionalScores order_ba);

// (wins - losses) / n + 1 for `subject`.
double winning_score(std::span<const PairwiseOutcome> outcomes, Subject subject);

struct JudgePrompt {
  static constexpr const char* kSystem = "You are a helpful and precise assistant for checking the quality of the answer.";

  std::string question;
  std::string answer_1;
  std::string answer_2;
  bool reprompt = false;  // second attempt after an unparsable reply

  std::string user() const;
};

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual std::string backend_id() const = 0;
  // Raw reply text. Must be thread-safe.
  virtual std::string complete(const JudgePrompt& prompt) = 0;
};

// First line must hold exactly two numbers separated by whitespace.
std::optional<PositionalScores> parse_judge_scores(const std::string& reply);

// Always prefers whichever answer is shown first.
class PositionBiasedJudge final : public JudgeBackend {
 public:
  std::string backend_id() const override { return "mock-judge-position"; }
  std::string complete(const JudgePrompt&) override { return "9 3\nThe first answer is better."; }
};

// Prefers the longer answer regardless of position; equal lengths tie.
class LengthJudge final : public JudgeBackend {
 public:
  std::string backend_id() const override { return "mock-judge-length"; }
  std::string complete(const JudgePrompt& p) override;
};

// Looks up each answer's score in a table (unknown answers score `fallback`).
class TableJudge final : public JudgeBackend {
 public:
  explicit TableJudge(std::map<std::string, double> scores, double fallback = 5.0)
      : scores_(std::move(scores)), fallback_(fallback) {}
  std::string backend_id() const override;
  std::string complete(const JudgePrompt& p) override;

 private:
  std::map<std::string, double> scores_;
  double fallback_;
};

struct PairwiseOptions {
  ContentCache* cache = nullptr;
  std::size_t max_in_flight = 4;
  std::size_t max_retries = 3;  // transport failures; parse failures get exactly one reprompt
};

struct PairwiseEval {
  std::vector<PairwiseOutcome> outcomes;  // ascending instruction id
  double winning_score_a = 1.0;
  std::size_t judge_calls = 0;
  std::size_t parse_failures = 0;
};

PairwiseEval run_pairwise_eval(const Corpus& instructions, const std::map<SampleId, std::string>& answers_a,
                               const std::map<SampleId, std::string>& answers_b, JudgeBackend& judge,
                               const PairwiseOptions& opts = {});

nlohmann::json to_json(const PairwiseOutcome& o);

// Reads {"id": ..., "answer"|"output": ...} lines.
std::map<SampleId, std::string> load_answers(const std::filesystem::path& path);

}  // namespace curate
