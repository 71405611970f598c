#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "curate/corpus.hpp"

namespace curate {

struct BackendSpec {
  std::string kind = "mock";  // mock | http | table (logprob) | mock_position (judge)
  std::string endpoint;
  std::string model;
  std::string shape;  // adapter shape, see the http backends
  std::filesystem::path path;  // table fixture

  nlohmann::json to_json() const;
};

struct JudgeSpec {
  std::filesystem::path answers_a;
  std::filesystem::path answers_b;
  std::filesystem::path instructions;  // empty: judge on the ingested corpus
};

// One declarative run configuration. Relative paths resolve against the config file's directory.
struct PipelineConfig {
  std::filesystem::path corpus;
  IdPolicy id_policy = IdPolicy::use_field;
  std::size_t char_budget = 8000;
  PromptTemplate prompt_template = PromptTemplate::alpaca();
  std::string embed_text = "prompt";  // prompt | instruction

  BackendSpec embed;
  BackendSpec logprob;
  BackendSpec complexity;
  BackendSpec judge_backend;
  std::optional<JudgeSpec> judge;

  std::size_t n_neighbors = 32;
  std::size_t k_clusters = 5;
  bool cluster_on_normalized = false;
  double tau = 0.9;
  std::optional<std::size_t> budget_k;
  std::optional<double> budget_fraction = 0.10;
  bool backfill = false;
  std::uint64_t seed = 0;

  std::filesystem::path cache_dir;
  std::filesystem::path output_dir;
  std::size_t max_in_flight = 4;
  std::size_t max_retries = 3;
  std::size_t batch_size = 32;
  std::size_t max_tokens = 2048;
  std::optional<double> drop_ifd_above;
  std::string unconditioned_context;
  std::string api_key;

  // Reads the document, applies CURATE_* environment overrides and validates.
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

  void validate() const;
};

}  // namespace curate
