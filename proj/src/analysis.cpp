#include "curate/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "curate/concurrency.hpp"
#include "curate/error.hpp"
#include "curate/hashing.hpp"

namespace curate {

Ranking Ranking::from_values(std::string metric_name, std::map<SampleId, double> values) {
  Ranking r;
  r.metric_name = std::move(metric_name);
  for (const auto& [id, v] : values) {
    if (!std::isfinite(v)) fail(ErrorKind::invalid_input, "ranking '" + r.metric_name + "': non-finite value for '" + id + "'");
    r.ordered_ids.push_back(id);
  }
  // values is id-ordered, so stable_sort keeps ties in ascending id order.
  std::stable_sort(r.ordered_ids.begin(), r.ordered_ids.end(),
                   [&](const SampleId& a, const SampleId& b) { return values.at(a) > values.at(b); });
  r.values = std::move(values);
  return r;
}

Ranking Ranking::from_order(std::string metric_name, std::vector<SampleId> ordered_ids) {
  std::map<SampleId, double> values;
  for (std::size_t i = 0; i < ordered_ids.size(); ++i) {
    if (!values.emplace(ordered_ids[i], -static_cast<double>(i)).second) {
      fail(ErrorKind::invalid_input, "ranking '" + metric_name + "': duplicate id '" + ordered_ids[i] + "'");
    }
  }
  Ranking r;
  r.metric_name = std::move(metric_name);
  r.ordered_ids = std::move(ordered_ids);
  r.values = std::move(values);
  return r;
}

namespace {

void require_same_ids(const Ranking& r1, const Ranking& r2) {
  const bool same = r1.values.size() == r2.values.size() &&
                    std::equal(r1.values.begin(), r1.values.end(), r2.values.begin(),
                               [](const auto& a, const auto& b) { return a.first == b.first; });
  if (!same) fail(ErrorKind::invalid_input, "rankings '" + r1.metric_name + "' and '" + r2.metric_name + "' cover different ids");
}

}  // namespace

double overlap_ratio(const Ranking& r1, const Ranking& r2, double p) {
  require_same_ids(r1, r2);
  if (!(p > 0.0 && p <= 1.0)) fail(ErrorKind::invalid_input, "overlap_ratio: cutoff must be in (0, 1]");
  const std::size_t n = r1.ordered_ids.size();
  if (n == 0) fail(ErrorKind::invalid_input, "overlap_ratio: empty rankings");
  const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(p * static_cast<double>(n))));
  const std::set<SampleId> top1(r1.ordered_ids.begin(), r1.ordered_ids.begin() + static_cast<std::ptrdiff_t>(m));
  std::size_t shared = 0;
  for (std::size_t i = 0; i < m; ++i) shared += top1.contains(r2.ordered_ids[i]);
  return static_cast<double>(shared) / static_cast<double>(m);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(const Ranking& r1, const Ranking& r2) {
  require_same_ids(r1, r2);
  const std::size_t n = r1.values.size();
  if (n < 2) fail(ErrorKind::invalid_input, "spearman: need at least 2 items");
  std::vector<double> v1, v2;
  v1.reserve(n);
  v2.reserve(n);
  for (const auto& [id, v] : r1.values) v1.push_back(v);
  for (const auto& [id, v] : r2.values) v2.push_back(v);
  const auto a = average_ranks(v1);
  const auto b = average_ranks(v2);
  const double mean = (static_cast<double>(n) + 1.0) / 2.0;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (a[i] - mean) * (b[i] - mean);
    da += (a[i] - mean) * (a[i] - mean);
    db += (b[i] - mean) * (b[i] - mean);
  }
  if (da == 0.0 || db == 0.0) fail(ErrorKind::invalid_input, "spearman: undefined for a constant ranking");
  return num / std::sqrt(da * db);
}

nlohmann::json ConsistencyReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [cutoff, ratio] : overlaps) rows.push_back({{"cutoff", cutoff}, {"overlap", ratio}});
  return {{"n", n}, {"overlap", rows}, {"spearman", spearman}};
}

ConsistencyReport consistency(const std::map<SampleId, DifficultyRecord>& difficulty,
                              std::span<const InfluenceRecord> records) {
  std::map<SampleId, double> ifd, ici;
  for (const auto& r : records) {
    if (!r.scored()) continue;
    ifd[r.candidate_id] = difficulty.at(r.candidate_id).ifd;
    ici[r.candidate_id] = r.unweighted_ici();
  }
  const auto by_ifd = Ranking::from_values("ifd", std::move(ifd));
  const auto by_ici = Ranking::from_values("ici", std::move(ici));
  ConsistencyReport out;
  out.n = by_ifd.ordered_ids.size();
  for (double p : kOverlapCutoffs) out.overlaps.emplace_back(p, overlap_ratio(by_ifd, by_ici, p));
  out.spearman = spearman(by_ifd, by_ici);
  return out;
}

// ---- pairwise judging -------------------------------------------------------------------------------

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::win_a: return "win_a";
    case Verdict::win_b: return "win_b";
    case Verdict::tie: return "tie";
  }
  return "tie";
}

Verdict decide_verdict(PositionalScores order_ab, PositionalScores order_ba) {
  const double a1 = order_ab.first, b1 = order_ab.second;
  const double b2 = order_ba.first, a2 = order_ba.second;
  if (a1 >= b1 && a2 >= b2 && (a1 > b1 || a2 > b2)) return Verdict::win_a;
  if (b1 >= a1 && b2 >= a2 && (b1 > a1 || b2 > a2)) return Verdict::win_b;
  return Verdict::tie;
}

double winning_score(std::span<const PairwiseOutcome> outcomes, Subject subject) {
  if (outcomes.empty()) fail(ErrorKind::invalid_input, "winning_score: no outcomes");
  const Verdict win = subject == Subject::a ? Verdict::win_a : Verdict::win_b;
  const Verdict loss = subject == Subject::a ? Verdict::win_b : Verdict::win_a;
  long wins = 0, losses = 0;
  for (const auto& o : outcomes) {
    wins += o.verdict == win;
    losses += o.verdict == loss;
  }
  return static_cast<double>(wins - losses) / static_cast<double>(outcomes.size()) + 1.0;
}

std::string JudgePrompt::user() const {
  std::string out = "[Question]\n" + question + "\n\n[The Start of Assistant 1's Answer]\n" + answer_1 +
                    "\n[The End of Assistant 1's Answer]\n\n[The Start of Assistant 2's Answer]\n" + answer_2 +
                    "\n[The End of Assistant 2's Answer]\n\n[System]\n"
                    "We would like to request your feedback on the performance of two AI assistants in response to "
                    "the user question displayed above. Please rate the helpfulness, relevance, accuracy, level of "
                    "details of their responses. Each assistant receives an overall score on a scale of 1 to 10, "
                    "where a higher score indicates better overall performance. Please first output a single line "
                    "containing only two values indicating the scores for Assistant 1 and 2, respectively. The two "
                    "scores are separated by a space. In the subsequent line, please provide a comprehensive "
                    "explanation of your evaluation, avoiding any potential bias and ensuring that the order in which "
                    "the responses were presented does not affect your judgment.";
  if (reprompt) out += "\n\nYour previous reply could not be read. The first line must contain only the two scores.";
  return out;
}

std::optional<PositionalScores> parse_judge_scores(const std::string& reply) {
  std::string first = reply.substr(0, reply.find('\n'));
  std::istringstream in(first);
  std::vector<std::string> fields;
  std::string f;
  while (in >> f) fields.push_back(f);
  if (fields.size() != 2) return std::nullopt;
  double parsed[2];
  for (int i = 0; i < 2; ++i) {
    char* end = nullptr;
    parsed[i] = std::strtod(fields[i].c_str(), &end);
    if (end == fields[i].c_str() || *end != '\0' || !std::isfinite(parsed[i])) return std::nullopt;
  }
  return PositionalScores{parsed[0], parsed[1]};
}

std::string LengthJudge::complete(const JudgePrompt& p) {
  const auto l1 = p.answer_1.size(), l2 = p.answer_2.size();
  const int s1 = l1 > l2 ? 8 : l1 < l2 ? 4 : 6;
  const int s2 = l2 > l1 ? 8 : l2 < l1 ? 4 : 6;
  return std::to_string(s1) + " " + std::to_string(s2) + "\nPreferred the more detailed answer.";
}

std::string TableJudge::backend_id() const {
  std::string blob;
  for (const auto& [text, score] : scores_) blob += text + '\x1f' + std::to_string(score) + '\x1e';
  return "mock-judge-table-" + sha256_hex(blob).substr(0, 12);
}

std::string TableJudge::complete(const JudgePrompt& p) {
  auto score_of = [&](const std::string& answer) {
    auto it = scores_.find(answer);
    return it == scores_.end() ? fallback_ : it->second;
  };
  std::ostringstream out;
  out << score_of(p.answer_1) << ' ' << score_of(p.answer_2) << "\nScored from table.";
  return out.str();
}

namespace {

struct JudgedOrder {
  std::optional<PositionalScores> scores;
  std::string rationale;
};

std::string rationale_of(const std::string& reply) {
  const auto nl = reply.find('\n');
  return nl == std::string::npos ? std::string{} : reply.substr(nl + 1);
}

}  // namespace

PairwiseEval run_pairwise_eval(const Corpus& instructions, const std::map<SampleId, std::string>& answers_a,
                               const std::map<SampleId, std::string>& answers_b, JudgeBackend& judge,
                               const PairwiseOptions& opts) {
  if (instructions.empty()) fail(ErrorKind::invalid_input, "pairwise eval: no instructions");
  std::vector<const Sample*> items;
  for (const auto& s : instructions.samples()) {
    if (!answers_a.contains(s.id)) fail(ErrorKind::invalid_input, "pairwise eval: answers A lack '" + s.id + "'");
    if (!answers_b.contains(s.id)) fail(ErrorKind::invalid_input, "pairwise eval: answers B lack '" + s.id + "'");
    items.push_back(&s);
  }
  std::sort(items.begin(), items.end(), [](const Sample* x, const Sample* y) { return x->id < y->id; });

  const auto backend_id = judge.backend_id();
  std::atomic<std::size_t> calls{0};
  auto ask = [&](const JudgePrompt& prompt) {
    const nlohmann::json request{{"op", "judge"}, {"backend", backend_id}, {"system", JudgePrompt::kSystem},
                                 {"user_sha256", sha256_hex(prompt.user())}};
    const auto key = ContentCache::key_for(request);
    if (opts.cache) {
      if (auto hit = opts.cache->get(key)) return hit->get<std::string>();
    }
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= opts.max_retries; ++attempt) {
      try {
        ++calls;
        auto reply = judge.complete(prompt);
        if (opts.cache) opts.cache->put(key, reply);
        return reply;
      } catch (const std::exception& e) {
        last_error = e.what();
      }
    }
    fail(ErrorKind::backend, "judge backend failed after " + std::to_string(opts.max_retries + 1) + " attempts: " + last_error);
  };

  std::vector<JudgedOrder> judged(items.size() * 2);
  parallel_for(judged.size(), opts.max_in_flight, [&](std::size_t job) {
    const Sample& s = *items[job / 2];
    const bool a_first = job % 2 == 0;
    JudgePrompt prompt;
    prompt.question = s.input ? s.instruction + "\n\n" + *s.input : s.instruction;
    prompt.answer_1 = a_first ? answers_a.at(s.id) : answers_b.at(s.id);
    prompt.answer_2 = a_first ? answers_b.at(s.id) : answers_a.at(s.id);
    auto reply = ask(prompt);
    auto scores = parse_judge_scores(reply);
    if (!scores) {
      prompt.reprompt = true;
      reply = ask(prompt);
      scores = parse_judge_scores(reply);
    }
    judged[job] = {scores, rationale_of(reply)};
  });

  PairwiseEval out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& ab = judged[2 * i];
    const auto& ba = judged[2 * i + 1];
    PairwiseOutcome o;
    o.instruction_id = items[i]->id;
    o.rationale_ab = ab.rationale;
    o.rationale_ba = ba.rationale;
    if (ab.scores && ba.scores) {
      o.order_ab = *ab.scores;
      o.order_ba = *ba.scores;
      o.verdict = decide_verdict(o.order_ab, o.order_ba);
    } else {
      o.parse_failure = true;
      o.verdict = Verdict::tie;
      ++out.parse_failures;
    }
    out.outcomes.push_back(std::move(o));
  }
  out.winning_score_a = winning_score(out.outcomes, Subject::a);
  out.judge_calls = calls.load();
  return out;
}

nlohmann::json to_json(const PairwiseOutcome& o) {
  return {{"instruction_id", o.instruction_id},
          {"order_ab", {o.order_ab.first, o.order_ab.second}},
          {"order_ba", {o.order_ba.first, o.order_ba.second}},
          {"verdict", to_string(o.verdict)},
          {"parse_failure", o.parse_failure},
          {"rationale_ab", o.rationale_ab},
          {"rationale_ba", o.rationale_ba}};
}

std::map<SampleId, std::string> load_answers(const std::filesystem::path& path) {
  std::map<SampleId, std::string> out;
  for (const auto& row : read_jsonl(path)) {
    const auto id = row.at("id").is_string() ? row["id"].get<std::string>() : row["id"].dump();
    const auto& text = row.contains("answer") ? row["answer"] : row.at("output");
    out[id] = text.get<std::string>();
  }
  return out;
}

}  // namespace curate
