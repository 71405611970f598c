#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace curate {

using SampleId = std::string;

// One instruction(+optional input)-response record.
struct Sample {
  SampleId id;
  std::string instruction;
  std::optional<std::string> input;  // empty-string input in the source is stored as absent
  std::string response;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();  // remaining source fields
  // The source line, byte for byte; export writes this so the output keeps the source format.
  std::string source_record;
  bool over_char_budget = false;

  bool operator==(const Sample& other) const {
    return id == other.id && instruction == other.instruction && input == other.input &&
           response == other.response && meta == other.meta;
  }
};

enum class IdPolicy { use_field, hash };

struct LoadOptions {
  IdPolicy id_policy = IdPolicy::use_field;
  // prompt + response characters above which a record is flagged (never dropped)
  std::size_t char_budget = 8000;
};

class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Sample> samples, std::string source_digest);

  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const std::string& source_digest() const noexcept { return source_digest_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  bool contains(const SampleId& id) const { return by_id_.contains(id); }
  const Sample& at(const SampleId& id) const;
  std::size_t position(const SampleId& id) const;

  bool operator==(const Corpus& other) const { return samples_ == other.samples_; }

 private:
  std::vector<Sample> samples_;
  std::string source_digest_;
  std::unordered_map<SampleId, std::size_t> by_id_;
};

// Content-hash id used when a record has no usable id.
SampleId content_id(const std::string& instruction, const std::optional<std::string>& input,
                    const std::string& response);

Corpus load_corpus(const std::filesystem::path& path, const LoadOptions& opts = {});

// Parses one line-delimited record. `line_no` is used in error messages only.
Sample parse_record(const std::string& line, std::size_t line_no, const LoadOptions& opts = {});

// Source-format record for `s` (its original line when it has one).
std::string to_record_line(const Sample& s);

// Writes one record per line in the given order.
void write_records(std::span<const Sample> samples, const std::filesystem::path& path);

// Prompt template. Forms use `{name}` placeholders; text between `{#input}` and `{/input}` is
// emitted only when the sample carries an input.
struct PromptTemplate {
  std::string zero_shot_form;
  std::string one_shot_form;
  std::string response_prefix;

  // Alpaca-style default; byte-exact so all scorers agree.
  static PromptTemplate alpaca();
  // Builds the one-shot form as: demo prompt, demo response, blank line, zero-shot form.
  static PromptTemplate from_zero_shot(std::string zero_shot_form, std::string response_prefix = {});

  // Throws if placeholders are unknown or the one-shot form does not use each zero-shot
  // placeholder exactly once.
  void validate() const;
};

std::string render_zero_shot(const PromptTemplate& t, const Sample& s);
std::string render_one_shot(const PromptTemplate& t, const Sample& demo, const Sample& target);

}  // namespace curate
