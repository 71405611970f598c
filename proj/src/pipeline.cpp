#include "curate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "curate/analysis.hpp"
#include "curate/cache.hpp"
#include "curate/concurrency.hpp"
#include "curate/error.hpp"
#include "curate/hashing.hpp"
#include "curate/http_backends.hpp"
#include "curate/influence.hpp"
#include "curate/probes.hpp"
#include "curate/selection.hpp"

namespace curate {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::embed: return "embed";
    case Stage::probes: return "probes";
    case Stage::score: return "score";
    case Stage::select: return "select";
    case Stage::analyze: return "analyze";
    case Stage::judge: return "judge";
    case Stage::report: return "report";
  }
  return "?";
}

std::optional<Stage> stage_from_string(const std::string& name) {
  for (auto s : kAllStages) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

std::vector<Stage> upstream_of(Stage s) {
  switch (s) {
    case Stage::ingest: return {};
    case Stage::embed: return {Stage::ingest};
    case Stage::probes: return {Stage::ingest, Stage::embed};
    case Stage::score: return {Stage::ingest, Stage::embed, Stage::probes};
    case Stage::select: return {Stage::ingest, Stage::embed, Stage::score};
    case Stage::analyze: return {Stage::score};
    case Stage::judge: return {Stage::ingest};
    case Stage::report: return {Stage::ingest, Stage::score, Stage::select};
  }
  return {};
}

std::size_t RunSummary::backend_calls() const {
  std::size_t total = 0;
  for (const auto& s : stages) total += s.counters.value("backend_calls", std::size_t{0});
  return total;
}

namespace {

std::string status_name(StageStatus s) {
  switch (s) {
    case StageStatus::pending: return "pending";
    case StageStatus::done: return "done";
    case StageStatus::failed: return "failed";
  }
  return "pending";
}

StageStatus status_from(const std::string& s) {
  if (s == "done") return StageStatus::done;
  if (s == "failed") return StageStatus::failed;
  return StageStatus::pending;
}

json template_json(const PromptTemplate& t) {
  return {{"zero_shot_form", t.zero_shot_form}, {"one_shot_form", t.one_shot_form}, {"response_prefix", t.response_prefix}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::missing_artifact, "cannot open " + path.string());
  auto doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) fail(ErrorKind::io, "corrupt artifact " + path.string());
  return doc;
}

std::string fmt(double x, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

HttpOptions http_options(const PipelineConfig& cfg) {
  HttpOptions o;
  o.api_key = cfg.api_key;
  return o;
}

}  // namespace

struct Pipeline::Impl {
  const PipelineConfig& cfg;
  ContentCache cache;
  std::unique_ptr<EmbeddingBackend> embed_backend;
  std::unique_ptr<LogprobBackend> logprob_backend;
  std::unique_ptr<ComplexityBackend> complexity_backend;
  std::unique_ptr<JudgeBackend> judge_backend;

  explicit Impl(const PipelineConfig& c) : cfg(c), cache(c.cache_dir) {}

  fs::path stage_dir(Stage s) const { return cfg.output_dir / to_string(s); }
  fs::path state_path(Stage s) const { return cfg.output_dir / "state" / (to_string(s) + ".json"); }

  // ---- backends -------------------------------------------------------------------------------

  EmbeddingBackend& embedder() {
    if (!embed_backend) {
      const auto& b = cfg.embed;
      if (b.kind == "mock") {
        embed_backend = std::make_unique<MockEmbeddingBackend>(substream_seed(cfg.seed, "mock-embed"));
      } else if (b.kind == "http") {
        auto shape = b.shape == "embeddings_api" ? HttpEmbeddingBackend::Shape::embeddings_api : HttpEmbeddingBackend::Shape::native;
        embed_backend = std::make_unique<HttpEmbeddingBackend>(Endpoint::parse(b.endpoint), b.model, shape, http_options(cfg));
      } else {
        fail(ErrorKind::config, "unknown embed backend kind '" + b.kind + "'");
      }
    }
    return *embed_backend;
  }

  LogprobBackend& logprobs() {
    if (!logprob_backend) {
      const auto& b = cfg.logprob;
      const auto seed = substream_seed(cfg.seed, "mock-logprob");
      if (b.kind == "mock") {
        logprob_backend = std::make_unique<SyntheticLogprobBackend>(seed, true, cfg.max_tokens);
      } else if (b.kind == "mock_context_free") {
        logprob_backend = std::make_unique<SyntheticLogprobBackend>(seed, false, cfg.max_tokens);
      } else if (b.kind == "table") {
        logprob_backend = TableLogprobBackend::load(b.path);
      } else if (b.kind == "http") {
        auto shape = b.shape == "completions" ? HttpLogprobBackend::Shape::completions : HttpLogprobBackend::Shape::native;
        logprob_backend = std::make_unique<HttpLogprobBackend>(Endpoint::parse(b.endpoint), b.model, shape, http_options(cfg));
      } else {
        fail(ErrorKind::config, "unknown logprob backend kind '" + b.kind + "'");
      }
    }
    return *logprob_backend;
  }

  ComplexityBackend& complexity() {
    if (!complexity_backend) {
      const auto& b = cfg.complexity;
      if (b.kind == "mock") {
        complexity_backend = std::make_unique<MockComplexityBackend>();
      } else if (b.kind == "http") {
        auto shape = b.shape == "numeral_logits" ? HttpComplexityBackend::Shape::numeral_logits : HttpComplexityBackend::Shape::native;
        complexity_backend = std::make_unique<HttpComplexityBackend>(Endpoint::parse(b.endpoint), b.model, shape, http_options(cfg));
      } else {
        fail(ErrorKind::config, "unknown complexity backend kind '" + b.kind + "'");
      }
    }
    return *complexity_backend;
  }

  JudgeBackend& judge() {
    if (!judge_backend) {
      const auto& b = cfg.judge_backend;
      if (b.kind == "mock") {
        judge_backend = std::make_unique<LengthJudge>();
      } else if (b.kind == "mock_position") {
        judge_backend = std::make_unique<PositionBiasedJudge>();
      } else if (b.kind == "http") {
        judge_backend = std::make_unique<HttpJudgeBackend>(Endpoint::parse(b.endpoint), b.model, http_options(cfg));
      } else {
        fail(ErrorKind::config, "unknown judge backend kind '" + b.kind + "'");
      }
    }
    return *judge_backend;
  }

  // ---- state ----------------------------------------------------------------------------------

  std::optional<StageState> load_state(Stage s) const {
    const auto path = state_path(s);
    if (!fs::exists(path)) return std::nullopt;
    std::ifstream in(path);
    auto doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) return std::nullopt;
    StageState st;
    st.stage = s;
    st.status = status_from(doc.value("status", "pending"));
    st.input_digest = doc.value("input_digest", "");
    st.outputs = doc.value("outputs", json::object());
    st.counters = doc.value("counters", json::object());
    return st;
  }

  void save_state(const StageState& st) const {
    fs::create_directories(state_path(st.stage).parent_path());
    json doc{{"stage", to_string(st.stage)},
             {"status", status_name(st.status)},
             {"input_digest", st.input_digest},
             {"outputs", st.outputs},
             {"counters", st.counters}};
    write_text(state_path(st.stage), doc.dump(2) + "\n");
  }

  bool outputs_intact(const StageState& st) const {
    if (st.outputs.empty()) return false;
    for (const auto& [rel, digest] : st.outputs.items()) {
      const auto path = cfg.output_dir / rel;
      if (!fs::exists(path) || sha256_file(path) != digest.get<std::string>()) return false;
    }
    return true;
  }

  bool completed(Stage s) const {
    auto st = load_state(s);
    return st && st->status == StageStatus::done && outputs_intact(*st);
  }

  bool judge_configured() const { return cfg.judge.has_value(); }

  // ---- digests --------------------------------------------------------------------------------

  json config_slice(Stage s) {
    switch (s) {
      case Stage::ingest:
        return {{"corpus_sha256", sha256_file(cfg.corpus)},
                {"id_policy", cfg.id_policy == IdPolicy::hash ? "hash" : "use_field"},
                {"char_budget", cfg.char_budget}};
      case Stage::embed:
        return {{"backend", embedder().backend_id()}, {"embed_text", cfg.embed_text}, {"template", template_json(cfg.prompt_template)}};
      case Stage::probes:
        return {{"backend", complexity().backend_id()}, {"n_neighbors", cfg.n_neighbors}, {"k_clusters", cfg.k_clusters},
                {"seed", cfg.seed}, {"cluster_on_normalized", cfg.cluster_on_normalized}};
      case Stage::score:
        return {{"backend", logprobs().backend_id()},
                {"template", template_json(cfg.prompt_template)},
                {"unconditioned_context", cfg.unconditioned_context},
                {"drop_ifd_above", cfg.drop_ifd_above ? json(*cfg.drop_ifd_above) : json(nullptr)}};
      case Stage::select:
        return {{"selection", to_json(selection_config())}, {"run_info", run_info()}};
      case Stage::analyze: return json::object();
      case Stage::judge: {
        json j{{"backend", judge().backend_id()}};
        if (cfg.judge) {
          j["answers_a"] = sha256_file(cfg.judge->answers_a);
          j["answers_b"] = sha256_file(cfg.judge->answers_b);
          j["instructions"] = cfg.judge->instructions.empty() ? "ingest" : sha256_file(cfg.judge->instructions);
        }
        return j;
      }
      case Stage::report: return {{"k_clusters", cfg.k_clusters}};
    }
    return json::object();
  }

  std::vector<Stage> inputs_of(Stage s) const {
    auto ups = upstream_of(s);
    if (s == Stage::report) {
      if (completed(Stage::analyze)) ups.push_back(Stage::analyze);
      if (judge_configured() && completed(Stage::judge)) ups.push_back(Stage::judge);
    }
    return ups;
  }

  std::string input_digest(Stage s) {
    json upstream = json::object();
    for (auto u : inputs_of(s)) {
      auto st = load_state(u);
      upstream[to_string(u)] = st ? st->outputs : json(nullptr);
    }
    return sha256_hex(json{{"config", config_slice(s)}, {"upstream", upstream}}.dump());
  }

  std::optional<std::string> rerun_reason(Stage s, const std::string& digest) const {
    auto st = load_state(s);
    if (!st) return "never run";
    if (st->status != StageStatus::done) return "previous run " + status_name(st->status);
    if (st->input_digest != digest) return "inputs changed";
    if (!outputs_intact(*st)) return "outputs missing or modified";
    return std::nullopt;
  }

  // ---- shared loaders -------------------------------------------------------------------------

  LoadOptions load_options() const { return {cfg.id_policy, cfg.char_budget}; }

  Corpus ingested() const {
    auto summary = read_json(stage_dir(Stage::ingest) / "summary.json");
    auto loaded = load_corpus(stage_dir(Stage::ingest) / "corpus.jsonl", load_options());
    return Corpus(loaded.samples(), summary.at("source_digest").get<std::string>());
  }

  EmbeddingIndex index() const { return EmbeddingIndex::load(stage_dir(Stage::embed) / "index.json"); }

  std::vector<InfluenceRecord> influence() const {
    std::vector<InfluenceRecord> out;
    for (const auto& row : read_jsonl(stage_dir(Stage::score) / "influence.jsonl")) out.push_back(influence_record_from_json(row));
    return out;
  }

  std::map<SampleId, DifficultyRecord> difficulty() const {
    std::map<SampleId, DifficultyRecord> out;
    for (const auto& row : read_jsonl(stage_dir(Stage::score) / "difficulty.jsonl")) {
      auto r = difficulty_record_from_json(row);
      out.emplace(r.sample_id, std::move(r));
    }
    return out;
  }

  SelectionConfig selection_config() const {
    SelectionConfig sc;
    sc.budget_k = cfg.budget_k;
    sc.budget_fraction = cfg.budget_fraction;
    sc.tau = cfg.tau;
    sc.backfill = cfg.backfill;
    return sc;
  }

  json run_info() {
    return {{"seed", cfg.seed},
            {"backends",
             {{"embed", embedder().backend_id()}, {"logprob", logprobs().backend_id()}, {"complexity", complexity().backend_id()}}},
            {"n_neighbors", cfg.n_neighbors},
            {"k_clusters", cfg.k_clusters},
            {"config", to_json(selection_config())}};
  }

  std::function<std::string(const Sample&)> embed_text_fn() const {
    if (cfg.embed_text == "instruction") return [](const Sample& s) { return s.instruction; };
    const auto t = cfg.prompt_template;
    return [t](const Sample& s) { return render_zero_shot(t, s); };
  }

  // ---- stages ---------------------------------------------------------------------------------

  // Each returns (outputs relative to output_dir, counters).
  using StageOutput = std::pair<std::vector<fs::path>, json>;

  StageOutput do_ingest() {
    auto corpus = load_corpus(cfg.corpus, load_options());
    const auto dir = stage_dir(Stage::ingest);
    write_records(corpus.samples(), dir / "corpus.jsonl");
    std::size_t flagged = 0;
    for (const auto& s : corpus.samples()) flagged += s.over_char_budget;
    json summary{{"n_samples", corpus.size()}, {"source_digest", corpus.source_digest()}, {"over_char_budget", flagged}};
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    return {{dir / "corpus.jsonl", dir / "summary.json"}, {{"backend_calls", 0}, {"n_samples", corpus.size()}}};
  }

  StageOutput do_embed() {
    const auto corpus = ingested();
    EmbedOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.max_in_flight = cfg.max_in_flight;
    opts.max_retries = cfg.max_retries;
    opts.cache = &cache;
    opts.text_of = embed_text_fn();
    EmbedStats stats;
    const auto index = build_index(corpus, embedder(), opts, &stats);
    const auto path = stage_dir(Stage::embed) / "index.json";
    index.save(path);
    return {{path}, {{"backend_calls", stats.backend_calls}, {"cache_hits", stats.cache_hits}}};
  }

  StageOutput do_probes() {
    const auto corpus = ingested();
    const auto idx = index();
    if (corpus.size() <= cfg.n_neighbors) {
      fail(ErrorKind::config, "corpus of " + std::to_string(corpus.size()) + " samples is too small for n_neighbors=" +
                                  std::to_string(cfg.n_neighbors));
    }
    std::vector<std::string> instructions;
    for (const auto& s : corpus.samples()) instructions.push_back(s.instruction);
    ComplexityOptions copts{&cache, cfg.max_retries, cfg.max_in_flight};
    ComplexityStats cstats;
    const auto scores = score_complexity(complexity(), instructions, copts, &cstats);
    std::map<SampleId, double> by_id;
    for (std::size_t i = 0; i < corpus.size(); ++i) by_id.emplace(corpus.samples()[i].id, scores[i]);

    ProbeOptions popts;
    popts.n_neighbors = cfg.n_neighbors;
    popts.k_clusters = cfg.k_clusters;
    popts.seed = cfg.seed;
    popts.kmeans.normalize = cfg.cluster_on_normalized;
    std::vector<SampleId> ids;
    for (const auto& [id, score] : by_id) ids.push_back(id);
    std::vector<ProbeSet> sets(ids.size());
    parallel_for(ids.size(), cfg.max_in_flight, [&](std::size_t i) {
      sets[i] = build_probe_set(idx, ids[i], [&](const SampleId& id) { return by_id.at(id); }, popts);
    });

    const auto dir = stage_dir(Stage::probes);
    std::vector<json> rows;
    std::size_t low = 0;
    for (const auto& p : sets) {
      rows.push_back(to_json(p));
      low += p.low_diversity();
    }
    write_jsonl(rows, dir / "probe_sets.jsonl");
    write_text(dir / "complexity.json", json(by_id).dump() + "\n");
    return {{dir / "probe_sets.jsonl", dir / "complexity.json"},
            {{"backend_calls", cstats.backend_calls}, {"cache_hits", cstats.cache_hits}, {"low_diversity", low}}};
  }

  StageOutput do_score() {
    const auto corpus = ingested();
    const auto idx = index();
    std::map<SampleId, ProbeSet> probe_sets;
    for (const auto& row : read_jsonl(stage_dir(Stage::probes) / "probe_sets.jsonl")) {
      auto p = probe_set_from_json(row);
      probe_sets.emplace(p.candidate_id, std::move(p));
    }
    ScoringOptions sopts;
    sopts.cache = &cache;
    sopts.max_retries = cfg.max_retries;
    sopts.unconditioned_context = cfg.unconditioned_context;
    DifficultyScorer scorer(logprobs(), cfg.prompt_template, sopts);
    ScoreOptions opts;
    opts.max_in_flight = cfg.max_in_flight;
    opts.drop_ifd_above = cfg.drop_ifd_above;
    auto scores = score_corpus(corpus, probe_sets, scorer, idx, opts);

    const auto dir = stage_dir(Stage::score);
    write_score_table(scores.records, dir / "scores.tsv");
    std::vector<json> rows;
    std::size_t total_probes = 0, max_probes = 0, clamped = 0;
    for (const auto& r : scores.records) {
      rows.push_back(to_json(r));
      total_probes += r.per_probe.size();
      max_probes = std::max(max_probes, r.per_probe.size());
      clamped += r.clamped_cosines;
    }
    write_jsonl(rows, dir / "influence.jsonl");
    rows.clear();
    for (const auto& [id, d] : scores.difficulty) rows.push_back(to_json(d));
    write_jsonl(rows, dir / "difficulty.jsonl");

    const std::size_t n = corpus.size();
    json accounting{{"n_samples", n},
                    {"k_clusters", cfg.k_clusters},
                    {"cold_bound_per_candidate", 3 * cfg.k_clusters + 1},
                    {"max_cold_calls_per_candidate", 3 * max_probes + 1},
                    {"distinct_requests", 2 * n + total_probes},
                    {"distinct_requests_per_sample", static_cast<double>(2 * n + total_probes) / static_cast<double>(n)},
                    {"new_backend_calls", scorer.backend_calls()},
                    {"cache_hits", scorer.cache_hits()},
                    {"clamped_cosines", clamped}};
    write_text(dir / "accounting.json", accounting.dump(2) + "\n");
    return {{dir / "scores.tsv", dir / "influence.jsonl", dir / "difficulty.jsonl", dir / "accounting.json"},
            {{"backend_calls", scorer.backend_calls()},
             {"cache_hits", scorer.cache_hits()},
             {"base_calls", scores.base_calls},
             {"demo_calls", scores.demo_calls}}};
  }

  StageOutput do_select() {
    const auto corpus = ingested();
    const auto idx = index();
    const auto records = influence();
    const auto result = select(records, idx, selection_config());
    const auto dir = stage_dir(Stage::select);
    const auto manifest = export_coreset(result, corpus, dir / "coreset.jsonl", run_info());
    write_text(dir / "selection.json", to_json(result).dump(2) + "\n");
    if (result.achieved_k < result.budget) {
      std::fprintf(stderr, "warning: achieved %zu of budget %zu under tau=%g\n", result.achieved_k, result.budget, cfg.tau);
    }
    return {{dir / "coreset.jsonl", manifest, dir / "selection.json"}, {{"backend_calls", 0}, {"achieved_k", result.achieved_k}}};
  }

  StageOutput do_analyze() {
    const auto records = influence();
    const auto report = consistency(difficulty(), records);
    const auto path = stage_dir(Stage::analyze) / "analysis.json";
    write_text(path, json{{"ifd_vs_ici", report.to_json()}}.dump(2) + "\n");
    return {{path}, {{"backend_calls", 0}}};
  }

  StageOutput do_judge() {
    if (!cfg.judge) fail(ErrorKind::config, "judge stage needs a \"judge\" section with answers_a and answers_b");
    const auto instructions = cfg.judge->instructions.empty() ? ingested() : load_corpus(cfg.judge->instructions, load_options());
    const auto a = load_answers(cfg.judge->answers_a);
    const auto b = load_answers(cfg.judge->answers_b);
    PairwiseOptions opts{&cache, cfg.max_in_flight, cfg.max_retries};
    const auto eval = run_pairwise_eval(instructions, a, b, judge(), opts);
    const auto dir = stage_dir(Stage::judge);
    std::vector<json> rows;
    std::size_t wins = 0, losses = 0, ties = 0;
    for (const auto& o : eval.outcomes) {
      rows.push_back(to_json(o));
      wins += o.verdict == Verdict::win_a;
      losses += o.verdict == Verdict::win_b;
      ties += o.verdict == Verdict::tie;
    }
    write_jsonl(rows, dir / "outcomes.jsonl");
    json summary{{"n", eval.outcomes.size()},
                 {"wins", wins},
                 {"losses", losses},
                 {"ties", ties},
                 {"parse_failures", eval.parse_failures},
                 {"winning_score_a", eval.winning_score_a},
                 {"winning_score_b", winning_score(eval.outcomes, Subject::b)},
                 {"backend", judge().backend_id()}};
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    return {{dir / "outcomes.jsonl", dir / "summary.json"}, {{"backend_calls", eval.judge_calls}}};
  }

  StageOutput do_report() {
    const auto dir = stage_dir(Stage::report);
    const auto manifest = read_json(stage_dir(Stage::select) / "coreset.manifest.json");
    const auto accounting = read_json(stage_dir(Stage::score) / "accounting.json");
    const auto records = influence();
    const auto corpus_summary = read_json(stage_dir(Stage::ingest) / "summary.json");

    std::vector<double> w;
    std::size_t low_diversity = 0, unscored = 0;
    for (const auto& r : records) {
      if (!r.scored()) {
        ++unscored;
        continue;
      }
      w.push_back(r.wici);
      low_diversity += std::count(r.flags.begin(), r.flags.end(), "low_probe_diversity");
    }
    std::sort(w.begin(), w.end());
    auto quantile = [&](double p) {
      if (w.empty()) return std::nan("");
      return w[static_cast<std::size_t>(std::llround(p * static_cast<double>(w.size() - 1)))];
    };

    json report;
    report["n_samples"] = corpus_summary.at("n_samples");
    report["source_digest"] = manifest.at("source_digest");
    report["budget"] = manifest.at("budget");
    report["achieved_k"] = manifest.at("achieved_k");
    report["tau"] = manifest.at("config").at("tau");
    report["skip_counts"] = manifest.at("skip_counts");
    report["wici_quantiles"] = {{"min", quantile(0.0)}, {"p25", quantile(0.25)}, {"median", quantile(0.5)},
                                {"p75", quantile(0.75)}, {"max", quantile(1.0)}};
    report["low_probe_diversity"] = low_diversity;
    report["unscored"] = unscored;
    report["logprob_accounting"] = accounting;

    std::ostringstream txt;
    txt << "curation run report\n"
        << "corpus: " << report["n_samples"].get<std::size_t>() << " samples, source sha256 "
        << report["source_digest"].get<std::string>() << "\n"
        << "budget: " << report["budget"].get<std::size_t>() << "  tau: " << fmt(report["tau"].get<double>()) << "\n"
        << "achieved_k: " << report["achieved_k"].get<std::size_t>() << "\n"
        << "skipped: similar_to=" << manifest["skip_counts"].value("similar_to", 0)
        << " budget_reached=" << manifest["skip_counts"].value("budget_reached", 0)
        << " no_score=" << manifest["skip_counts"].value("no_score", 0) << "\n"
        << "wici quantiles: min " << fmt(quantile(0.0)) << "  p25 " << fmt(quantile(0.25)) << "  median "
        << fmt(quantile(0.5)) << "  p75 " << fmt(quantile(0.75)) << "  max " << fmt(quantile(1.0)) << "\n"
        << "probe sets: K=" << cfg.k_clusters << ", low-diversity flagged: " << low_diversity << "\n"
        << "logprob calls:\n"
        << "  new backend calls this run: " << accounting.at("new_backend_calls").get<std::size_t>()
        << "  cache hits: " << accounting.at("cache_hits").get<std::size_t>() << "\n"
        << "  distinct requests: " << accounting.at("distinct_requests").get<std::size_t>() << " ("
        << fmt(accounting.at("distinct_requests_per_sample").get<double>(), "%.3f") << " per sample)\n"
        << "  cold calls per candidate: max " << accounting.at("max_cold_calls_per_candidate").get<std::size_t>()
        << " (bound 3K+1 = " << accounting.at("cold_bound_per_candidate").get<std::size_t>() << ")\n";

    const auto analysis_path = stage_dir(Stage::analyze) / "analysis.json";
    if (completed(Stage::analyze)) {
      const auto analysis = read_json(analysis_path).at("ifd_vs_ici");
      report["ifd_vs_ici"] = analysis;
      txt << "IFD vs ICI consistency (n=" << analysis.at("n").get<std::size_t>() << "):";
      for (const auto& row : analysis.at("overlap")) {
        txt << "  top " << fmt(row.at("cutoff").get<double>() * 100.0, "%.0f") << "% "
            << fmt(row.at("overlap").get<double>(), "%.4f");
      }
      txt << "  spearman " << fmt(analysis.at("spearman").get<double>(), "%.4f") << "\n";
    }
    if (judge_configured() && completed(Stage::judge)) {
      const auto summary = read_json(stage_dir(Stage::judge) / "summary.json");
      report["pairwise"] = summary;
      txt << "pairwise: winning score " << fmt(summary.at("winning_score_a").get<double>(), "%.3f") << " over "
          << summary.at("n").get<std::size_t>() << " instructions (wins " << summary.at("wins").get<std::size_t>()
          << ", losses " << summary.at("losses").get<std::size_t>() << ", ties " << summary.at("ties").get<std::size_t>()
          << ")\n";
    }
    write_text(dir / "report.txt", txt.str());
    write_text(dir / "report.json", report.dump(2) + "\n");
    return {{dir / "report.txt", dir / "report.json"}, {{"backend_calls", 0}}};
  }

  StageOutput execute(Stage s) {
    fs::create_directories(stage_dir(s));
    switch (s) {
      case Stage::ingest: return do_ingest();
      case Stage::embed: return do_embed();
      case Stage::probes: return do_probes();
      case Stage::score: return do_score();
      case Stage::select: return do_select();
      case Stage::analyze: return do_analyze();
      case Stage::judge: return do_judge();
      case Stage::report: return do_report();
    }
    return {};
  }

  StageRun step(Stage s, bool dry_run, bool upstream_pending) {
    StageRun run;
    run.stage = s;
    const auto digest = upstream_pending ? std::string{} : input_digest(s);
    const auto reason = upstream_pending ? std::optional<std::string>("upstream will re-run") : rerun_reason(s, digest);
    if (!reason) {
      run.reason = "up to date";
      return run;
    }
    run.reason = *reason;
    if (dry_run) {
      run.executed = true;
      return run;
    }
    StageState st;
    st.stage = s;
    st.input_digest = digest;
    try {
      auto [outputs, counters] = execute(s);
      for (const auto& p : outputs) st.outputs[fs::relative(p, cfg.output_dir).generic_string()] = sha256_file(p);
      st.counters = counters;
      st.status = StageStatus::done;
    } catch (...) {
      st.status = StageStatus::failed;
      save_state(st);
      throw;
    }
    save_state(st);
    run.executed = true;
    run.counters = st.counters;
    return run;
  }
};

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>(cfg_)) {
  fs::create_directories(cfg_.output_dir);
}

Pipeline::~Pipeline() = default;

RunSummary Pipeline::run_all(bool dry_run) {
  RunSummary summary;
  std::map<Stage, bool> will_run;
  for (auto s : kAllStages) {
    if (s == Stage::judge && !impl_->judge_configured()) continue;
    bool upstream_pending = false;
    if (dry_run) {
      for (auto u : impl_->inputs_of(s)) upstream_pending = upstream_pending || will_run[u];
      if (s == Stage::report) upstream_pending = upstream_pending || will_run[Stage::analyze] || will_run[Stage::judge];
    }
    auto run = impl_->step(s, dry_run, upstream_pending);
    will_run[s] = run.executed;
    summary.stages.push_back(std::move(run));
  }
  return summary;
}

RunSummary Pipeline::run_stage(Stage stage, bool dry_run) {
  for (auto u : upstream_of(stage)) {
    if (!impl_->completed(u)) {
      fail(ErrorKind::missing_artifact, "stage '" + to_string(stage) + "' needs the outputs of '" + to_string(u) +
                                            "'; run `curate " + to_string(u) + "` first");
    }
  }
  RunSummary summary;
  summary.stages.push_back(impl_->step(stage, dry_run, false));
  return summary;
}

std::string Pipeline::report_text() const {
  const auto path = impl_->stage_dir(Stage::report) / "report.txt";
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::missing_artifact, "no report yet; run `curate report` first");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace curate
