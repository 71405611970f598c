#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <json.hpp>

namespace curate {

// Content-addressed response cache: one file per key under `dir`, key = SHA-256 hex of the
// canonical (sorted-key, compact) request document. Concurrent writers of the same key are
// safe: each write lands in a private temp file and is renamed into place, last write wins.
// An empty `dir` keeps entries in memory only.
class ContentCache {
 public:
  ContentCache() = default;
  explicit ContentCache(std::filesystem::path dir);

  static std::string key_for(const nlohmann::json& request);

  std::optional<nlohmann::json> get(const std::string& key) const;
  void put(const std::string& key, const nlohmann::json& value);

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& key) const;

  std::filesystem::path dir_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, nlohmann::json> memo_;
};

}  // namespace curate
