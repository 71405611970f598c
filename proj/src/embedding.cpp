#include "curate/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "curate/concurrency.hpp"
#include "curate/detail/rng.hpp"
#include "curate/error.hpp"
#include "curate/hashing.hpp"

namespace curate {

std::string MockEmbeddingBackend::backend_id() const {
  return "mock-embed-" + std::to_string(dim_) + "-s" + std::to_string(seed_);
}

std::vector<Embedding> MockEmbeddingBackend::embed(std::span<const std::string> texts) {
  ++calls_;
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::mt19937_64 rng(substream_seed(seed_, "mock-embed", text));
    Embedding v(dim_);
    double norm = 0.0;
    for (auto& x : v) {
      x = detail::standard_normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

// ---- index ------------------------------------------------------------------------------------

EmbeddingIndex::EmbeddingIndex(std::string backend_id, std::size_t dim) : backend_id_(std::move(backend_id)), dim_(dim) {
  if (dim_ == 0) fail(ErrorKind::invalid_input, "embedding dim must be positive");
}

void EmbeddingIndex::add(const SampleId& id, std::span<const double> values) {
  if (values.size() != dim_) {
    fail(ErrorKind::invalid_input, "embedding for '" + id + "' has dim " + std::to_string(values.size()) +
                                       ", index dim is " + std::to_string(dim_));
  }
  if (!std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); })) {
    fail(ErrorKind::invalid_input, "embedding for '" + id + "' has non-finite entries");
  }
  if (!rows_.emplace(id, ids_.size()).second) fail(ErrorKind::invalid_input, "duplicate embedding id '" + id + "'");
  ids_.push_back(id);
  data_.insert(data_.end(), values.begin(), values.end());
}

std::size_t EmbeddingIndex::row(const SampleId& id) const {
  auto it = rows_.find(id);
  if (it == rows_.end()) fail(ErrorKind::invalid_input, "id '" + id + "' is not in the embedding index");
  return it->second;
}

std::span<const double> EmbeddingIndex::vector(const SampleId& id) const {
  return {data_.data() + row(id) * dim_, dim_};
}

double squared_l2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) fail(ErrorKind::invalid_input, "cosine is undefined for a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<SampleId> EmbeddingIndex::knn(const SampleId& query_id, std::size_t n) const {
  const std::size_t q = row(query_id);
  if (n == 0 || n + 1 > size()) {
    fail(ErrorKind::invalid_input, "knn: n=" + std::to_string(n) + " must be in [1, " + std::to_string(size() - 1) + "]");
  }
  const std::span<const double> qv{data_.data() + q * dim_, dim_};
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(size() - 1);
  for (std::size_t r = 0; r < size(); ++r) {
    if (r == q) continue;
    scored.emplace_back(squared_l2(qv, {data_.data() + r * dim_, dim_}), r);
  }
  auto closer = [this](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first < y.first;
    return ids_[x.second] < ids_[y.second];
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), closer);
  std::vector<SampleId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ids_[scored[i].second]);
  return out;
}

double EmbeddingIndex::cosine(const SampleId& a, const SampleId& b) const { return cosine_similarity(vector(a), vector(b)); }

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  nlohmann::json doc;
  doc["backend_id"] = backend_id_;
  doc["dim"] = dim_;
  doc["ids"] = ids_;
  auto& vectors = doc["vectors"] = nlohmann::json::array();
  for (std::size_t r = 0; r < size(); ++r) {
    vectors.push_back(std::vector<double>(data_.begin() + r * dim_, data_.begin() + (r + 1) * dim_));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << doc.dump() << '\n';
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::missing_artifact, "cannot open embedding index " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) fail(ErrorKind::io, "corrupt embedding index " + path.string());
  EmbeddingIndex index(doc.at("backend_id").get<std::string>(), doc.at("dim").get<std::size_t>());
  const auto& ids = doc.at("ids");
  const auto& vectors = doc.at("vectors");
  for (std::size_t i = 0; i < ids.size(); ++i) index.add(ids[i].get<std::string>(), vectors[i].get<std::vector<double>>());
  return index;
}

// ---- build --------------------------------------------------------------------------------------

namespace {

nlohmann::json embed_request_key(const std::string& backend_id, const std::string& text) {
  return {{"op", "embed"}, {"backend", backend_id}, {"text_sha256", sha256_hex(text)}};
}

}  // namespace

EmbeddingIndex build_index(const Corpus& corpus, EmbeddingBackend& backend, const EmbedOptions& opts, EmbedStats* stats) {
  if (opts.batch_size == 0) fail(ErrorKind::config, "embedding batch size must be positive");
  const auto backend_id = backend.backend_id();
  const auto template_ = PromptTemplate::alpaca();
  auto text_of = opts.text_of ? opts.text_of : [&](const Sample& s) { return render_zero_shot(template_, s); };

  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& s : corpus.samples()) texts.push_back(text_of(s));

  // Resolve from cache; identical texts are embedded once.
  std::map<std::string, Embedding> resolved;
  std::vector<std::string> pending;
  EmbedStats local;
  for (const auto& text : texts) {
    if (resolved.contains(text)) continue;
    if (opts.cache) {
      if (auto hit = opts.cache->get(ContentCache::key_for(embed_request_key(backend_id, text)))) {
        resolved.emplace(text, hit->get<Embedding>());
        ++local.cache_hits;
        continue;
      }
    }
    resolved.emplace(text, Embedding{});
    pending.push_back(text);
  }

  const std::size_t n_batches = (pending.size() + opts.batch_size - 1) / opts.batch_size;
  std::vector<std::vector<Embedding>> batch_out(n_batches);
  std::atomic<std::size_t> calls{0};
  parallel_for(n_batches, opts.max_in_flight, [&](std::size_t b) {
    const std::size_t begin = b * opts.batch_size;
    const std::size_t end = std::min(pending.size(), begin + opts.batch_size);
    std::span<const std::string> batch{pending.data() + begin, end - begin};
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= opts.max_retries; ++attempt) {
      try {
        ++calls;
        auto vecs = backend.embed(batch);
        if (vecs.size() != batch.size()) {
          fail(ErrorKind::backend, "backend returned " + std::to_string(vecs.size()) + " vectors for " +
                                       std::to_string(batch.size()) + " texts");
        }
        batch_out[b] = std::move(vecs);
        return;
      } catch (const std::exception& e) {
        last_error = e.what();
      }
    }
    fail(ErrorKind::backend, "embedding batch " + std::to_string(b) + " (texts " + std::to_string(begin) + ".." +
                                 std::to_string(end - 1) + ") failed after " + std::to_string(opts.max_retries + 1) +
                                 " attempts: " + last_error);
  });

  std::size_t dim = 0;
  for (const auto& [text, vec] : resolved) {
    if (!vec.empty()) dim = vec.size();
  }
  for (std::size_t b = 0; b < n_batches; ++b) {
    for (std::size_t i = 0; i < batch_out[b].size(); ++i) {
      auto& vec = batch_out[b][i];
      if (dim == 0) dim = vec.size();
      if (vec.size() != dim) {
        fail(ErrorKind::backend, "embedding batch " + std::to_string(b) + " returned dim " + std::to_string(vec.size()) +
                                     ", expected " + std::to_string(dim));
      }
      const auto& text = pending[b * opts.batch_size + i];
      if (opts.cache) opts.cache->put(ContentCache::key_for(embed_request_key(backend_id, text)), vec);
      resolved[text] = std::move(vec);
    }
  }

  EmbeddingIndex index(backend_id, dim);
  for (std::size_t i = 0; i < corpus.size(); ++i) index.add(corpus.samples()[i].id, resolved.at(texts[i]));
  local.backend_calls = calls.load();
  if (stats) *stats = local;
  return index;
}

}  // namespace curate
