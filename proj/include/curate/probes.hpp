#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "curate/cache.hpp"
#include "curate/corpus.hpp"
#include "curate/embedding.hpp"

namespace curate {

// ---- clustering -----------------------------------------------------------------------------------

struct Cluster {
  std::vector<SampleId> members;  // in neighbor-list order
  Embedding centroid;
};

struct ClusterAssignment {
  SampleId candidate_id;
  std::vector<Cluster> clusters;  // non-empty, ordered by their nearest member's neighbor rank
  std::size_t k = 0;              // requested cluster count
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
};

struct KMeansOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;  // max centroid shift that counts as converged
  bool normalize = false;   // cluster unit-normalized copies of the vectors
};

// k-means++ seeding then Lloyd iterations. Fewer points than `k` yields singleton clusters.
// An emptied cluster is reseeded at the point farthest from its assigned centroid; clusters that
// stay empty (only possible with coincident points) are dropped from the result.
ClusterAssignment cluster_neighbors(const EmbeddingIndex& index, std::span<const SampleId> neighbor_ids, std::size_t k,
                                    std::uint64_t seed, const KMeansOptions& opts = {});

// ---- complexity -------------------------------------------------------------------------------

inline constexpr double kMinComplexity = 1.0;
inline constexpr double kMaxComplexity = 6.0;

class ComplexityBackend {
 public:
  virtual ~ComplexityBackend() = default;
  virtual std::string backend_id() const = 0;
  // Expected complexity in [1, 6]. Must be thread-safe.
  virtual double complexity(const std::string& instruction) = 0;
};

// score = 1 + 5 * (byte length mod 97) / 96
class MockComplexityBackend final : public ComplexityBackend {
 public:
  std::string backend_id() const override { return "mock-complexity-len97"; }
  double complexity(const std::string& instruction) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::atomic<std::size_t> calls_{0};
};

// Expected score sum_k k * softmax(logits)_k over the numerals 1..6.
double expected_complexity(std::span<const double, 6> numeral_logits);

// Chat prompt that elicits a complexity numeral from the scorer model.
struct ComplexityPrompt {
  static constexpr const char* kSystem =
      "You are a helpful assistant. Please identify the complexity score of the following user query.";
  static std::string user(const std::string& instruction) { return "##Query:\n" + instruction + "\n\n##Complexity:\n"; }
};

// Adapter over any source of the six numeral logits (a served scorer model, or a fixture).
class NumeralLogitComplexityBackend final : public ComplexityBackend {
 public:
  using LogitSource = std::function<std::array<double, 6>(const std::string& instruction)>;
  NumeralLogitComplexityBackend(std::string backend_id, LogitSource source)
      : backend_id_(std::move(backend_id)), source_(std::move(source)) {}
  std::string backend_id() const override { return backend_id_; }
  double complexity(const std::string& instruction) override { return expected_complexity(source_(instruction)); }

 private:
  std::string backend_id_;
  LogitSource source_;
};

struct ComplexityOptions {
  ContentCache* cache = nullptr;
  std::size_t max_retries = 3;
  std::size_t max_in_flight = 4;
};

struct ComplexityStats {
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
};

std::vector<double> score_complexity(ComplexityBackend& backend, std::span<const std::string> instructions,
                                     const ComplexityOptions& opts = {}, ComplexityStats* stats = nullptr);

// ---- probe sets ---------------------------------------------------------------------------------

struct ProbeProvenance {
  std::size_t cluster_index = 0;
  double complexity = 0.0;
  std::size_t cluster_size = 0;
};

struct ProbeSet {
  SampleId candidate_id;
  std::vector<SampleId> probe_ids;          // one per cluster, cluster order
  std::vector<ProbeProvenance> provenance;  // parallel to probe_ids
  std::size_t requested_k = 0;

  // Fewer probes than requested clusters: the neighborhood collapsed under clustering.
  bool low_diversity() const noexcept { return probe_ids.size() < requested_k; }
};

struct ProbeOptions {
  std::size_t n_neighbors = 32;
  std::size_t k_clusters = 5;
  std::uint64_t seed = 0;
  KMeansOptions kmeans;
};

using ComplexityLookup = std::function<double(const SampleId&)>;

// kNN, then clustering, then the highest-complexity member of each cluster (ties by ascending id).
ProbeSet build_probe_set(const EmbeddingIndex& index, const SampleId& candidate_id, const ComplexityLookup& complexity,
                         const ProbeOptions& opts);

// Convenience form that scores the neighbors' instructions with `backend` first.
ProbeSet build_probe_set(const EmbeddingIndex& index, const Corpus& corpus, const SampleId& candidate_id,
                         ComplexityBackend& backend, const ProbeOptions& opts, const ComplexityOptions& copts = {});

nlohmann::json to_json(const ProbeSet& p);
ProbeSet probe_set_from_json(const nlohmann::json& j);

}  // namespace curate
