#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace curate {

// Lower-case hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// Joins fields with a NUL separator before hashing, so ("ab","c") != ("a","bc").
std::string hash_fields(std::initializer_list<std::string_view> fields);

// 64-bit seed derived from a root seed and a named substream (e.g. stage name + candidate id).
// Adding unrelated substreams never perturbs an existing one.
std::uint64_t substream_seed(std::uint64_t root, std::string_view stream, std::string_view key = {});

}  // namespace curate
