#include "curate/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "curate/concurrency.hpp"
#include "curate/detail/rng.hpp"
#include "curate/error.hpp"
#include "curate/hashing.hpp"

namespace curate {

namespace {

using Points = std::vector<Embedding>;

Embedding mean_of(const Points& points, const std::vector<std::size_t>& assignment, std::size_t cluster,
                  const Embedding& fallback) {
  Embedding sum(fallback.size(), 0.0);
  std::size_t n = 0;
  for (std::size_t p = 0; p < points.size(); ++p) {
    if (assignment[p] != cluster) continue;
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += points[p][d];
    ++n;
  }
  if (n == 0) return fallback;
  for (auto& x : sum) x /= static_cast<double>(n);
  return sum;
}

std::vector<Embedding> kmeanspp_init(const Points& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.size();
  std::vector<Embedding> centers;
  std::vector<bool> chosen(n, false);
  auto pick = [&](std::size_t i) {
    chosen[i] = true;
    centers.push_back(points[i]);
  };
  pick(std::min(n - 1, static_cast<std::size_t>(detail::uniform01(rng) * static_cast<double>(n))));

  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_l2(points[i], centers.back()));
      total += d2[i];
    }
    std::size_t next = n;
    if (total > 0.0) {
      const double r = detail::uniform01(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && r < acc) {
          next = i;
          break;
        }
      }
      if (next == n) {  // r landed on the rounding tail: take the last positive-weight point
        for (std::size_t i = n; i-- > 0;) {
          if (d2[i] > 0.0) {
            next = i;
            break;
          }
        }
      }
    } else {
      // Every point coincides with a center; any unchosen point is as good as another.
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) free.push_back(i);
      }
      next = free[std::min(free.size() - 1, static_cast<std::size_t>(detail::uniform01(rng) * static_cast<double>(free.size())))];
    }
    pick(next);
  }
  return centers;
}

std::size_t nearest(const Embedding& point, const std::vector<Embedding>& centers) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_l2(point, centers[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

// Moves the point farthest from its own centroid into each empty cluster.
void repair_empty(const Points& points, std::vector<std::size_t>& assignment, std::vector<Embedding>& centers) {
  for (std::size_t c = 0; c < centers.size(); ++c) {
    std::vector<std::size_t> counts(centers.size(), 0);
    for (auto a : assignment) ++counts[a];
    if (counts[c] > 0) continue;
    std::size_t far = points.size();
    double far_d = 0.0;
    for (std::size_t p = 0; p < points.size(); ++p) {
      if (counts[assignment[p]] < 2) continue;
      const double d = squared_l2(points[p], centers[assignment[p]]);
      if (d > far_d) {
        far_d = d;
        far = p;
      }
    }
    if (far == points.size()) continue;  // coincident points: nothing can be split off
    assignment[far] = c;
    centers[c] = points[far];
  }
}

}  // namespace

ClusterAssignment cluster_neighbors(const EmbeddingIndex& index, std::span<const SampleId> neighbor_ids, std::size_t k,
                                    std::uint64_t seed, const KMeansOptions& opts) {
  if (neighbor_ids.empty()) fail(ErrorKind::invalid_input, "cluster_neighbors: empty neighbor list");
  if (k == 0) fail(ErrorKind::invalid_input, "cluster_neighbors: k must be positive");

  Points points;
  points.reserve(neighbor_ids.size());
  for (const auto& id : neighbor_ids) {
    auto v = index.vector(id);
    Embedding p(v.begin(), v.end());
    if (opts.normalize) {
      double norm = 0.0;
      for (double x : p) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (auto& x : p) x /= norm;
      }
    }
    points.push_back(std::move(p));
  }

  ClusterAssignment out;
  out.k = k;
  out.seed = seed;
  const std::size_t n = points.size();
  if (n < k) {
    for (std::size_t i = 0; i < n; ++i) out.clusters.push_back({{neighbor_ids[i]}, points[i]});
    return out;
  }

  std::mt19937_64 rng(seed);
  auto centers = kmeanspp_init(points, k, rng);
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    for (std::size_t p = 0; p < n; ++p) assignment[p] = nearest(points[p], centers);
    repair_empty(points, assignment, centers);
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      auto updated = mean_of(points, assignment, c, centers[c]);
      shift = std::max(shift, std::sqrt(squared_l2(updated, centers[c])));
      centers[c] = std::move(updated);
    }
    out.iterations = it + 1;
    if (shift < opts.tolerance) break;
  }

  std::vector<Cluster> clusters(k);
  for (std::size_t p = 0; p < n; ++p) clusters[assignment[p]].members.push_back(neighbor_ids[p]);
  for (std::size_t c = 0; c < k; ++c) clusters[c].centroid = centers[c];
  // Members were appended in neighbor order, so front() is each cluster's nearest member.
  std::vector<std::size_t> first_rank(k, n);
  for (std::size_t p = n; p-- > 0;) first_rank[assignment[p]] = p;
  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < k; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return first_rank[a] < first_rank[b]; });
  for (auto c : order) {
    if (!clusters[c].members.empty()) out.clusters.push_back(std::move(clusters[c]));
  }
  return out;
}

// ---- complexity -----------------------------------------------------------------------------------

double MockComplexityBackend::complexity(const std::string& instruction) {
  ++calls_;
  return 1.0 + 5.0 * static_cast<double>(instruction.size() % 97) / 96.0;
}

double expected_complexity(std::span<const double, 6> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(top)) fail(ErrorKind::backend, "complexity logits are not finite");
  double z = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double w = std::exp(logits[i] - top);
    z += w;
    weighted += static_cast<double>(i + 1) * w;
  }
  return weighted / z;
}

std::vector<double> score_complexity(ComplexityBackend& backend, std::span<const std::string> instructions,
                                     const ComplexityOptions& opts, ComplexityStats* stats) {
  const auto backend_id = backend.backend_id();
  std::vector<double> scores(instructions.size(), 0.0);
  std::atomic<std::size_t> calls{0}, hits{0};
  parallel_for(instructions.size(), opts.max_in_flight, [&](std::size_t i) {
    const nlohmann::json request{{"op", "complexity"}, {"backend", backend_id}, {"text_sha256", sha256_hex(instructions[i])}};
    const auto key = ContentCache::key_for(request);
    if (opts.cache) {
      if (auto hit = opts.cache->get(key)) {
        scores[i] = hit->get<double>();
        ++hits;
        return;
      }
    }
    std::string last_error;
    bool ok = false;
    for (std::size_t attempt = 0; attempt <= opts.max_retries && !ok; ++attempt) {
      try {
        ++calls;
        scores[i] = backend.complexity(instructions[i]);
        ok = true;
      } catch (const std::exception& e) {
        last_error = e.what();
      }
    }
    if (!ok) {
      fail(ErrorKind::backend, "complexity backend failed after " + std::to_string(opts.max_retries + 1) +
                                   " attempts: " + last_error);
    }
    if (!(scores[i] >= kMinComplexity && scores[i] <= kMaxComplexity)) {
      fail(ErrorKind::backend, "complexity backend returned " + std::to_string(scores[i]) + ", outside [1, 6]");
    }
    if (opts.cache) opts.cache->put(key, scores[i]);
  });
  if (stats) *stats = {calls.load(), hits.load()};
  return scores;
}

// ---- probe sets -----------------------------------------------------------------------------------

ProbeSet build_probe_set(const EmbeddingIndex& index, const SampleId& candidate_id, const ComplexityLookup& complexity,
                         const ProbeOptions& opts) {
  if (index.size() <= opts.n_neighbors) {
    fail(ErrorKind::invalid_input, "probe set: corpus of " + std::to_string(index.size()) + " samples needs more than " +
                                       std::to_string(opts.n_neighbors) + " to retrieve that many neighbors");
  }
  const auto neighbors = index.knn(candidate_id, opts.n_neighbors);
  auto clusters = cluster_neighbors(index, neighbors, opts.k_clusters,
                                    substream_seed(opts.seed, "probes", candidate_id), opts.kmeans);

  ProbeSet out;
  out.candidate_id = candidate_id;
  out.requested_k = opts.k_clusters;
  for (std::size_t c = 0; c < clusters.clusters.size(); ++c) {
    const auto& members = clusters.clusters[c].members;
    const SampleId* best = nullptr;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const auto& id : members) {
      const double score = complexity(id);
      if (score > best_score || (score == best_score && id < *best)) {
        best = &id;
        best_score = score;
      }
    }
    out.probe_ids.push_back(*best);
    out.provenance.push_back({c, best_score, members.size()});
  }
  return out;
}

ProbeSet build_probe_set(const EmbeddingIndex& index, const Corpus& corpus, const SampleId& candidate_id,
                         ComplexityBackend& backend, const ProbeOptions& opts, const ComplexityOptions& copts) {
  const auto neighbors = index.knn(candidate_id, std::min(opts.n_neighbors, index.size() - 1));
  std::vector<std::string> instructions;
  for (const auto& id : neighbors) instructions.push_back(corpus.at(id).instruction);
  const auto scores = score_complexity(backend, instructions, copts);
  std::map<SampleId, double> by_id;
  for (std::size_t i = 0; i < neighbors.size(); ++i) by_id.emplace(neighbors[i], scores[i]);
  return build_probe_set(index, candidate_id, [&](const SampleId& id) { return by_id.at(id); }, opts);
}

nlohmann::json to_json(const ProbeSet& p) {
  nlohmann::json provenance = nlohmann::json::array();
  for (const auto& pr : p.provenance) {
    provenance.push_back({{"cluster", pr.cluster_index}, {"complexity", pr.complexity}, {"cluster_size", pr.cluster_size}});
  }
  return {{"candidate_id", p.candidate_id}, {"probe_ids", p.probe_ids}, {"provenance", provenance}, {"requested_k", p.requested_k}};
}

ProbeSet probe_set_from_json(const nlohmann::json& j) {
  ProbeSet p;
  p.candidate_id = j.at("candidate_id").get<std::string>();
  p.probe_ids = j.at("probe_ids").get<std::vector<std::string>>();
  p.requested_k = j.at("requested_k").get<std::size_t>();
  for (const auto& pr : j.at("provenance")) {
    p.provenance.push_back({pr.at("cluster").get<std::size_t>(), pr.at("complexity").get<double>(),
                            pr.at("cluster_size").get<std::size_t>()});
  }
  return p;
}

}  // namespace curate
