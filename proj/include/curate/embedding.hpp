#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "curate/cache.hpp"
#include "curate/corpus.hpp"

namespace curate {

using Embedding = std::vector<double>;

// Implementations must be safe to call from several threads at once.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string backend_id() const = 0;
  // One vector per text, in input order.
  virtual std::vector<Embedding> embed(std::span<const std::string> texts) = 0;
};

// Offline backend: a hash of (seed, text) seeds a pseudo-random unit vector.
class MockEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit MockEmbeddingBackend(std::uint64_t seed = 0, std::size_t dim = 16) : seed_(seed), dim_(dim) {}
  std::string backend_id() const override;
  std::vector<Embedding> embed(std::span<const std::string> texts) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  std::atomic<std::size_t> calls_{0};
};

// Exact vector store. Immutable once built, so concurrent queries are safe.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  EmbeddingIndex(std::string backend_id, std::size_t dim);

  void add(const SampleId& id, std::span<const double> values);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::string& backend_id() const noexcept { return backend_id_; }
  const std::vector<SampleId>& ids() const noexcept { return ids_; }
  bool contains(const SampleId& id) const { return rows_.contains(id); }
  std::span<const double> vector(const SampleId& id) const;

  // n nearest ids by Euclidean distance, query excluded, ties by ascending id.
  std::vector<SampleId> knn(const SampleId& query_id, std::size_t n) const;
  double cosine(const SampleId& a, const SampleId& b) const;

  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);

 private:
  std::size_t row(const SampleId& id) const;

  std::string backend_id_;
  std::size_t dim_ = 0;
  std::vector<SampleId> ids_;
  std::vector<double> data_;  // row-major, size() x dim()
  std::unordered_map<SampleId, std::size_t> rows_;
};

double squared_l2(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct EmbedOptions {
  std::size_t batch_size = 32;
  std::size_t max_in_flight = 4;
  std::size_t max_retries = 3;
  ContentCache* cache = nullptr;
  // Text embedded per sample; defaults to the zero-shot prompt under the Alpaca template.
  std::function<std::string(const Sample&)> text_of;
};

struct EmbedStats {
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
};

EmbeddingIndex build_index(const Corpus& corpus, EmbeddingBackend& backend, const EmbedOptions& opts,
                           EmbedStats* stats = nullptr);

}  // namespace curate
