#include "curate/influence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "curate/concurrency.hpp"
#include "curate/error.hpp"

namespace curate {

double InfluenceRecord::unweighted_ici() const {
  if (per_probe.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : per_probe) sum += p.ici;
  return sum / static_cast<double>(per_probe.size());
}

double ici_single(double ifd_base, double ifd_with_demo) {
  if (!std::isfinite(ifd_base) || !std::isfinite(ifd_with_demo)) fail(ErrorKind::invalid_input, "ici: non-finite IFD");
  return ifd_base - ifd_with_demo;
}

InfluenceRecord wici(const SampleId& candidate_id, std::span<const ProbeObservation> probes) {
  if (probes.empty()) fail(ErrorKind::invalid_input, "wici: candidate '" + candidate_id + "' has no probes");
  InfluenceRecord r;
  r.candidate_id = candidate_id;
  const double denom = 2.0 * static_cast<double>(probes.size());
  for (const auto& p : probes) {
    double cos = p.cos_sim;
    if (!std::isfinite(cos) || cos > 1.0 + kCosineClampTolerance || cos < -1.0 - kCosineClampTolerance) {
      fail(ErrorKind::invalid_input, "wici: cosine " + std::to_string(cos) + " for probe '" + p.probe_id + "' is outside [-1, 1]");
    }
    if (cos > 1.0 || cos < -1.0) {
      cos = std::clamp(cos, -1.0, 1.0);
      ++r.clamped_cosines;
    }
    if (!std::isfinite(p.ici)) fail(ErrorKind::invalid_input, "wici: non-finite ICI for probe '" + p.probe_id + "'");
    ProbeInfluence pi;
    pi.probe_id = p.probe_id;
    pi.ici = p.ici;
    pi.cos_sim = cos;
    pi.weight = (1.0 - cos) / denom;
    r.wici += pi.weight * pi.ici;
    r.per_probe.push_back(std::move(pi));
  }
  if (r.clamped_cosines > 0) r.flags.push_back("cos_clamped");
  return r;
}

InfluenceRecord score_candidate(const Sample& candidate, const ProbeSet& probes, const Corpus& corpus,
                                DifficultyScorer& scorer, const EmbeddingIndex& index) {
  if (probes.probe_ids.empty()) {
    InfluenceRecord r;
    r.candidate_id = candidate.id;
    r.skip_reason = "empty_probe_set";
    return r;
  }
  const auto own = scorer.conditioned(candidate);
  std::vector<ProbeObservation> obs;
  std::vector<std::pair<double, double>> ifds;
  bool truncated = own.truncated;
  for (const auto& probe_id : probes.probe_ids) {
    const auto& probe = corpus.at(probe_id);
    const auto base = scorer.ifd(probe);
    const double with_demo = scorer.ifd_with_demo(candidate, probe);
    truncated = truncated || base.truncated;
    obs.push_back({probe_id, ici_single(base.ifd, with_demo), index.cosine(candidate.id, probe_id)});
    ifds.emplace_back(base.ifd, with_demo);
  }
  auto r = wici(candidate.id, obs);
  for (std::size_t i = 0; i < ifds.size(); ++i) {
    r.per_probe[i].ifd_base = ifds[i].first;
    r.per_probe[i].ifd_with_demo = ifds[i].second;
  }
  if (probes.low_diversity()) r.flags.push_back("low_probe_diversity");
  if (truncated) r.flags.push_back("truncated");
  return r;
}

CorpusScores score_corpus(const Corpus& corpus, const std::map<SampleId, ProbeSet>& probe_sets,
                          DifficultyScorer& scorer, const EmbeddingIndex& index, const ScoreOptions& opts) {
  CorpusScores out;
  const auto& samples = corpus.samples();

  const std::size_t calls_before = scorer.backend_calls();
  std::vector<DifficultyRecord> base(samples.size());
  parallel_for(samples.size(), opts.max_in_flight, [&](std::size_t i) { base[i] = scorer.ifd(samples[i]); });
  for (auto& d : base) out.difficulty.emplace(d.sample_id, std::move(d));
  out.base_calls = scorer.backend_calls() - calls_before;

  std::vector<const Sample*> order;
  for (const auto& s : samples) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });

  out.records.resize(order.size());
  parallel_for(order.size(), opts.max_in_flight, [&](std::size_t i) {
    const Sample& candidate = *order[i];
    auto& rec = out.records[i];
    const auto& diff = out.difficulty.at(candidate.id);
    if (opts.drop_ifd_above && diff.ifd > *opts.drop_ifd_above) {
      rec.candidate_id = candidate.id;
      rec.skip_reason = "ifd_above_threshold";
      return;
    }
    auto it = probe_sets.find(candidate.id);
    if (it == probe_sets.end()) {
      rec.candidate_id = candidate.id;
      rec.skip_reason = "no_probe_set";
      return;
    }
    rec = score_candidate(candidate, it->second, corpus, scorer, index);
    if (diff.ifd > 1.0) rec.flags.push_back("ifd_above_one");
  });
  out.demo_calls = scorer.backend_calls() - calls_before - out.base_calls;
  return out;
}

// ---- serialization --------------------------------------------------------------------------------

nlohmann::json to_json(const InfluenceRecord& r) {
  nlohmann::json per_probe = nlohmann::json::array();
  for (const auto& p : r.per_probe) {
    per_probe.push_back({{"probe_id", p.probe_id},
                         {"ifd_base", p.ifd_base},
                         {"ifd_with_demo", p.ifd_with_demo},
                         {"ici", p.ici},
                         {"cos_sim", p.cos_sim},
                         {"weight", p.weight}});
  }
  nlohmann::json j{{"candidate_id", r.candidate_id},
                   {"wici", r.wici},
                   {"per_probe", per_probe},
                   {"clamped_cosines", r.clamped_cosines},
                   {"flags", r.flags}};
  if (r.skip_reason) j["skip_reason"] = *r.skip_reason;
  return j;
}

InfluenceRecord influence_record_from_json(const nlohmann::json& j) {
  InfluenceRecord r;
  r.candidate_id = j.at("candidate_id").get<std::string>();
  r.wici = j.at("wici").get<double>();
  r.clamped_cosines = j.value("clamped_cosines", std::size_t{0});
  r.flags = j.value("flags", std::vector<std::string>{});
  if (j.contains("skip_reason")) r.skip_reason = j["skip_reason"].get<std::string>();
  for (const auto& p : j.at("per_probe")) {
    r.per_probe.push_back({p.at("probe_id").get<std::string>(), p.at("ifd_base").get<double>(),
                           p.at("ifd_with_demo").get<double>(), p.at("ici").get<double>(), p.at("cos_sim").get<double>(),
                           p.at("weight").get<double>()});
  }
  return r;
}

nlohmann::json to_json(const DifficultyRecord& r) {
  return {{"sample_id", r.sample_id},
          {"ppl_conditioned", r.ppl_conditioned},
          {"ppl_unconditioned", r.ppl_unconditioned},
          {"ifd", r.ifd},
          {"response_token_count", r.response_token_count},
          {"truncated", r.truncated}};
}

DifficultyRecord difficulty_record_from_json(const nlohmann::json& j) {
  DifficultyRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.ppl_conditioned = j.at("ppl_conditioned").get<double>();
  r.ppl_unconditioned = j.at("ppl_unconditioned").get<double>();
  r.ifd = j.at("ifd").get<double>();
  r.response_token_count = j.at("response_token_count").get<std::size_t>();
  r.truncated = j.value("truncated", false);
  return r;
}

void write_score_table(std::span<const InfluenceRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << "candidate_id\twici\tn_probes\tmin_ici\tmax_ici\tflags\n";
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return std::string(buf);
  };
  for (const auto& r : records) {
    std::string flags;
    for (const auto& f : r.flags) flags += (flags.empty() ? "" : ",") + f;
    if (r.skip_reason) flags += (flags.empty() ? "skipped:" : ",skipped:") + *r.skip_reason;
    if (flags.empty()) flags = "-";
    out << r.candidate_id << '\t';
    if (r.scored()) {
      double lo = r.per_probe.front().ici, hi = lo;
      for (const auto& p : r.per_probe) {
        lo = std::min(lo, p.ici);
        hi = std::max(hi, p.ici);
      }
      out << num(r.wici) << '\t' << r.per_probe.size() << '\t' << num(lo) << '\t' << num(hi);
    } else {
      out << "NA\t0\tNA\tNA";
    }
    out << '\t' << flags << '\n';
  }
}

void write_jsonl(const std::vector<nlohmann::json>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::missing_artifact, "cannot open " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded()) fail(ErrorKind::io, path.string() + ": malformed line " + std::to_string(line_no));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace curate
