#include "curate/cache.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "curate/error.hpp"
#include "curate/hashing.hpp"

namespace curate {

namespace fs = std::filesystem;

ContentCache::ContentCache(fs::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) fs::create_directories(dir_);
}

std::string ContentCache::key_for(const nlohmann::json& request) { return sha256_hex(request.dump()); }

fs::path ContentCache::path_for(const std::string& key) const { return dir_ / key.substr(0, 2) / key; }

std::optional<nlohmann::json> ContentCache::get(const std::string& key) const {
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  if (dir_.empty()) return std::nullopt;
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  auto value = nlohmann::json::parse(ss.str(), nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) return std::nullopt;  // torn or foreign file: treat as a miss
  std::lock_guard lock(mu_);
  memo_.emplace(key, value);
  return value;
}

void ContentCache::put(const std::string& key, const nlohmann::json& value) {
  {
    std::lock_guard lock(mu_);
    memo_[key] = value;
  }
  if (dir_.empty()) return;
  static std::atomic<std::uint64_t> counter{0};
  auto target = path_for(key);
  fs::create_directories(target.parent_path());
  std::ostringstream tmp_name;
  tmp_name << key << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << '.' << counter++;
  auto tmp = target.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cache: cannot write " + tmp.string());
    out << value.dump();
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(ErrorKind::io, "cache: cannot publish " + target.string());
  }
}

}  // namespace curate
