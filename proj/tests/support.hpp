#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "curate/corpus.hpp"
#include "curate/embedding.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& name) { return fs::path(CURATE_FIXTURES) / name; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("curate-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline curate::Sample sample(std::string id, std::string instruction, std::string response,
                             std::optional<std::string> input = std::nullopt) {
  curate::Sample s;
  s.id = std::move(id);
  s.instruction = std::move(instruction);
  s.response = std::move(response);
  s.input = std::move(input);
  return s;
}

inline curate::EmbeddingIndex index_of(const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  curate::EmbeddingIndex idx("fixture", rows.front().second.size());
  for (const auto& [id, v] : rows) idx.add(id, v);
  return idx;
}

inline std::string pad_id(std::size_t i, std::size_t width = 4) {
  auto s = std::to_string(i);
  return "x" + std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

inline curate::EmbeddingIndex random_index(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  curate::EmbeddingIndex idx("random", dim);
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : v) x = normal(rng);
    idx.add(pad_id(i), v);
  }
  return idx;
}

}  // namespace testing
