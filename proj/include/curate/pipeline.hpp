#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "curate/config.hpp"

namespace curate {

enum class Stage { ingest, embed, probes, score, select, analyze, judge, report };

inline constexpr Stage kAllStages[] = {Stage::ingest, Stage::embed,   Stage::probes, Stage::score,
                                       Stage::select, Stage::analyze, Stage::judge,  Stage::report};

std::string to_string(Stage s);
std::optional<Stage> stage_from_string(const std::string& name);
std::vector<Stage> upstream_of(Stage s);

enum class StageStatus { pending, done, failed };

// Persisted per stage under <output_dir>/state/<stage>.json.
struct StageState {
  Stage stage = Stage::ingest;
  StageStatus status = StageStatus::pending;
  std::string input_digest;
  nlohmann::json outputs = nlohmann::json::object();   // relative path -> sha256
  nlohmann::json counters = nlohmann::json::object();  // backend calls, cache hits, ...
};

struct StageRun {
  Stage stage;
  bool executed = false;
  std::string reason;  // why it ran, or why it was skipped
  nlohmann::json counters = nlohmann::json::object();
};

struct RunSummary {
  std::vector<StageRun> stages;
  // Backend requests issued during this invocation, all stages and backends.
  std::size_t backend_calls() const;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  // Full graph in dependency order. The judge stage joins only when configured. Stages whose
  // inputs and outputs are unchanged since their last successful run are skipped.
  RunSummary run_all(bool dry_run = false);

  // One stage; every upstream stage must already be done with intact outputs.
  RunSummary run_stage(Stage stage, bool dry_run = false);

  // Text of the last report stage output.
  std::string report_text() const;

  const PipelineConfig& config() const noexcept { return cfg_; }

 private:
  struct Impl;
  PipelineConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace curate
