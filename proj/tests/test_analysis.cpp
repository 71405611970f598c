#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "curate/analysis.hpp"
#include "curate/cache.hpp"
#include "curate/error.hpp"
#include "support.hpp"

using namespace curate;

namespace {

std::vector<SampleId> ids_of(const std::string& letters) {
  std::vector<SampleId> out;
  for (char c : letters) out.emplace_back(1, c);
  return out;
}

// Pearson correlation of ranks, ranks assigned by counting strictly smaller and equal values.
double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2.0;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

PairwiseOutcome outcome(Verdict v) {
  PairwiseOutcome o;
  o.verdict = v;
  return o;
}

Corpus questions(std::size_t n) {
  std::vector<Sample> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(testing::sample("i" + std::to_string(i), "Question " + std::to_string(i), "-"));
  return Corpus(s, "");
}

}  // namespace

TEST_CASE("overlap ratio examples") {
  auto a = Ranking::from_order("a", ids_of("abcdefghij"));
  CHECK(overlap_ratio(a, a, 0.1) == 1.0);
  CHECK(overlap_ratio(a, a, 0.5) == 1.0);
  auto b = Ranking::from_order("b", ids_of("defghabcij"));
  CHECK(overlap_ratio(a, b, 0.5) == doctest::Approx(0.4));
  auto rev = Ranking::from_order("r", ids_of("jihgfedcba"));
  CHECK(overlap_ratio(a, rev, 0.5) == 0.0);
  auto other = Ranking::from_order("o", ids_of("abcdefghik"));
  CHECK_THROWS_AS(overlap_ratio(a, other, 0.5), Error);
  CHECK(overlap_ratio(a, b, 0.01) == 0.0);  // m floors at 1
}

TEST_CASE("spearman examples") {
  auto a = Ranking::from_order("a", ids_of("abcdef"));
  CHECK(spearman(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman(a, Ranking::from_order("r", ids_of("fedcba"))) == doctest::Approx(-1.0).epsilon(1e-15));
  auto x = Ranking::from_values("x", {{"p", 1}, {"q", 2}, {"r", 3}});
  auto y = Ranking::from_values("y", {{"p", 2}, {"q", 1}, {"r", 3}});
  CHECK(std::abs(spearman(x, y) - 0.5) < 1e-12);
  auto one = Ranking::from_values("one", {{"p", 1}});
  CHECK_THROWS_AS(spearman(one, one), Error);
  CHECK_THROWS_AS(spearman(x, Ranking::from_values("z", {{"p", 1}, {"q", 2}, {"s", 3}})), Error);
}

TEST_CASE("average ranks share tied positions") {
  std::vector<double> v{10, 20, 20, 5, 20};
  CHECK(average_ranks(v) == std::vector<double>{2, 4, 4, 1, 4});
}

TEST_CASE("spearman and overlap against brute force on random fixtures") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> coarse(0, 30);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t n = trial < 3 ? 1000 : 37 + trial;
    std::map<SampleId, double> x, y;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = testing::pad_id(i);
      const double a = trial % 2 ? coarse(rng) : u(rng);
      const double b = 0.3 * a + (trial % 2 ? coarse(rng) : u(rng));
      x[id] = a;
      y[id] = b;
      xs.push_back(a);
      ys.push_back(b);
    }
    auto rx = Ranking::from_values("x", x);
    auto ry = Ranking::from_values("y", y);
    CHECK(std::abs(spearman(rx, ry) - brute_spearman(xs, ys)) < 1e-9);
    CHECK(std::abs(spearman(rx, ry) - spearman(ry, rx)) < 1e-15);
    for (double p : kOverlapCutoffs) {
      const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(p * n)));
      std::set<SampleId> t1(rx.ordered_ids.begin(), rx.ordered_ids.begin() + m);
      std::size_t both = 0;
      for (std::size_t i = 0; i < m; ++i) both += t1.count(ry.ordered_ids[i]);
      CHECK(overlap_ratio(rx, ry, p) == static_cast<double>(both) / static_cast<double>(m));
      CHECK(overlap_ratio(rx, ry, p) == overlap_ratio(ry, rx, p));
    }
  }
}

TEST_CASE("ranking order is descending with id tie-break") {
  auto r = Ranking::from_values("m", {{"b", 1.0}, {"a", 1.0}, {"c", 2.0}});
  CHECK(r.ordered_ids == std::vector<SampleId>{"c", "a", "b"});
}

TEST_CASE("verdict examples") {
  CHECK(decide_verdict({8, 6}, {5, 7}) == Verdict::win_a);
  CHECK(decide_verdict({7, 7}, {7, 7}) == Verdict::tie);
  CHECK(decide_verdict({8, 6}, {8, 6}) == Verdict::tie);
  CHECK(decide_verdict({7, 7}, {6, 7}) == Verdict::win_a);
  CHECK(decide_verdict({3, 9}, {9, 3}) == Verdict::win_b);
}

TEST_CASE("verdict is antisymmetric under swapping subjects") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> s(1, 10);
  for (int i = 0; i < 500; ++i) {
    PositionalScores ab{double(s(rng)), double(s(rng))};
    PositionalScores ba{double(s(rng)), double(s(rng))};
    // swapping A and B turns order_ab into order_ba and vice versa
    const auto v = decide_verdict(ab, ba);
    const auto w = decide_verdict(ba, ab);
    CHECK(((v == Verdict::tie && w == Verdict::tie) || (v == Verdict::win_a && w == Verdict::win_b) ||
           (v == Verdict::win_b && w == Verdict::win_a)));
  }
}

TEST_CASE("winning score examples") {
  std::vector<PairwiseOutcome> ties(10, outcome(Verdict::tie));
  CHECK(winning_score(ties, Subject::a) == 1.0);
  std::vector<PairwiseOutcome> wins(4, outcome(Verdict::win_a));
  CHECK(winning_score(wins, Subject::a) == 2.0);
  CHECK(winning_score(wins, Subject::b) == 0.0);
  std::vector<PairwiseOutcome> mixed;
  for (int i = 0; i < 60; ++i) mixed.push_back(outcome(Verdict::win_a));
  for (int i = 0; i < 30; ++i) mixed.push_back(outcome(Verdict::win_b));
  for (int i = 0; i < 10; ++i) mixed.push_back(outcome(Verdict::tie));
  CHECK(winning_score(mixed, Subject::a) == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(winning_score(mixed, Subject::a) + winning_score(mixed, Subject::b) == doctest::Approx(2.0));
  CHECK_THROWS_AS(winning_score(std::vector<PairwiseOutcome>{}, Subject::a), Error);
}

TEST_CASE("judge reply parsing") {
  CHECK(parse_judge_scores("8 6\nbecause") == PositionalScores{8, 6});
  CHECK(parse_judge_scores("7.5   9") == PositionalScores{7.5, 9});
  CHECK_FALSE(parse_judge_scores("Assistant 1: 8").has_value());
  CHECK_FALSE(parse_judge_scores("8\n6").has_value());
  CHECK_FALSE(parse_judge_scores("8 6 4").has_value());
  CHECK_FALSE(parse_judge_scores("").has_value());
}

TEST_CASE("judge prompt carries the template") {
  JudgePrompt p{"What is 2+2?", "4", "five"};
  const auto u = p.user();
  CHECK(u.rfind("[Question]\nWhat is 2+2?\n\n[The Start of Assistant 1's Answer]\n4\n", 0) == 0);
  CHECK(u.find("[The End of Assistant 2's Answer]\n\n[System]\n") != std::string::npos);
  CHECK(u.find("The two scores are separated by a space.") != std::string::npos);
  CHECK(std::string(JudgePrompt::kSystem) == "You are a helpful and precise assistant for checking the quality of the answer.");
}

TEST_CASE("self comparison with a deterministic judge scores 1") {
  auto q = questions(12);
  std::map<SampleId, std::string> answers;
  for (const auto& s : q.samples()) answers[s.id] = "answer " + std::string(s.id.size() * 3, 'x');
  LengthJudge judge;
  auto eval = run_pairwise_eval(q, answers, answers, judge);
  CHECK(eval.winning_score_a == 1.0);
  CHECK(eval.judge_calls == 24);
}

TEST_CASE("position-biased judge produces only ties") {
  auto q = questions(9);
  std::map<SampleId, std::string> a, b;
  for (const auto& s : q.samples()) {
    a[s.id] = "short";
    b[s.id] = "a much longer answer";
  }
  PositionBiasedJudge judge;
  auto eval = run_pairwise_eval(q, a, b, judge);
  for (const auto& o : eval.outcomes) CHECK(o.verdict == Verdict::tie);
  CHECK(eval.winning_score_a == 1.0);
}

TEST_CASE("length judge lets the longer answers win") {
  auto q = questions(5);
  std::map<SampleId, std::string> a, b;
  for (const auto& s : q.samples()) {
    a[s.id] = "short";
    b[s.id] = "a much longer answer";
  }
  LengthJudge judge;
  auto eval = run_pairwise_eval(q, a, b, judge);
  for (const auto& o : eval.outcomes) CHECK(o.verdict == Verdict::win_b);
  CHECK(eval.winning_score_a == 0.0);
}

TEST_CASE("scripted verdicts: 3 wins, 1 loss, 1 tie") {
  auto q = questions(5);
  std::map<SampleId, std::string> a, b;
  std::map<std::string, double> table;
  const char* script[] = {"win", "win", "win", "loss", "tie"};
  for (int i = 0; i < 5; ++i) {
    const auto id = "i" + std::to_string(i);
    a[id] = "A" + std::to_string(i);
    b[id] = "B" + std::to_string(i);
    const std::string kind = script[i];
    table[a[id]] = kind == "win" ? 9 : kind == "loss" ? 3 : 5;
    table[b[id]] = kind == "win" ? 4 : kind == "loss" ? 8 : 5;
  }
  TableJudge judge(table);
  auto eval = run_pairwise_eval(q, a, b, judge);
  CHECK(eval.winning_score_a == doctest::Approx(1.4).epsilon(1e-15));
}

namespace {

struct GarbledJudge : JudgeBackend {
  std::atomic<int> calls{0};
  bool recover;
  explicit GarbledJudge(bool r) : recover(r) {}
  std::string backend_id() const override { return recover ? "garbled-recover" : "garbled"; }
  std::string complete(const JudgePrompt& p) override {
    ++calls;
    if (recover && p.reprompt) return "6 5\nok";
    return "Both answers are fine.";
  }
};

}  // namespace

TEST_CASE("unparsable replies get one reprompt, then a flagged tie") {
  auto q = questions(3);
  std::map<SampleId, std::string> a, b;
  for (const auto& s : q.samples()) {
    a[s.id] = "x";
    b[s.id] = "y";
  }
  GarbledJudge dead(false);
  auto eval = run_pairwise_eval(q, a, b, dead);
  CHECK(dead.calls == 12);
  CHECK(eval.parse_failures == 3);
  for (const auto& o : eval.outcomes) {
    CHECK(o.parse_failure);
    CHECK(o.verdict == Verdict::tie);
  }
  GarbledJudge fixed(true);
  auto ok = run_pairwise_eval(q, a, b, fixed);
  CHECK(ok.parse_failures == 0);
}

TEST_CASE("judge replies are cached") {
  auto q = questions(4);
  std::map<SampleId, std::string> a, b;
  for (const auto& s : q.samples()) {
    a[s.id] = "x";
    b[s.id] = "yy";
  }
  ContentCache cache;
  PairwiseOptions opts;
  opts.cache = &cache;
  LengthJudge judge;
  CHECK(run_pairwise_eval(q, a, b, judge, opts).judge_calls == 8);
  CHECK(run_pairwise_eval(q, a, b, judge, opts).judge_calls == 0);
  a.erase("i2");
  CHECK_THROWS_AS(run_pairwise_eval(q, a, b, judge, opts), Error);
}

TEST_CASE("consistency report uses unweighted ici") {
  std::map<SampleId, DifficultyRecord> diff;
  std::vector<InfluenceRecord> recs;
  for (int i = 0; i < 10; ++i) {
    const auto id = "c" + std::to_string(i);
    DifficultyRecord d;
    d.sample_id = id;
    d.ifd = 0.1 * i;
    diff[id] = d;
    InfluenceRecord r;
    r.candidate_id = id;
    // weighted and unweighted orders disagree; the report follows the plain mean
    r.per_probe.push_back({"p", 0, 0, 0.1 * i, 0.99, 0});
    r.per_probe.push_back({"q", 0, 0, 0.1 * i, -0.99, 0});
    r.wici = -0.1 * i;
    recs.push_back(r);
  }
  auto rep = consistency(diff, recs);
  CHECK(rep.n == 10);
  CHECK(rep.spearman == doctest::Approx(1.0));
  for (const auto& [p, ratio] : rep.overlaps) CHECK(ratio == 1.0);
}
