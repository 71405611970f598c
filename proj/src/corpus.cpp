#include "curate/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "curate/error.hpp"
#include "curate/hashing.hpp"

namespace curate {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

Corpus::Corpus(std::vector<Sample> samples, std::string source_digest)
    : samples_(std::move(samples)), source_digest_(std::move(source_digest)) {
  by_id_.reserve(samples_.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!by_id_.emplace(samples_[i].id, i).second) {
      fail(ErrorKind::invalid_input, "duplicate sample id '" + samples_[i].id + "'");
    }
  }
}

const Sample& Corpus::at(const SampleId& id) const { return samples_[position(id)]; }

std::size_t Corpus::position(const SampleId& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) fail(ErrorKind::invalid_input, "unknown sample id '" + id + "'");
  return it->second;
}

SampleId content_id(const std::string& instruction, const std::optional<std::string>& input,
                    const std::string& response) {
  return hash_fields({instruction, input.value_or(""), response}).substr(0, 16);
}

namespace {

std::string line_prefix(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

std::string required_text(const ordered_json& rec, const char* field, std::size_t line_no) {
  auto it = rec.find(field);
  if (it == rec.end()) fail(ErrorKind::invalid_input, line_prefix(line_no) + "missing field \"" + field + "\"");
  if (!it->is_string()) fail(ErrorKind::invalid_input, line_prefix(line_no) + "field \"" + field + "\" is not a string");
  auto text = it->get<std::string>();
  if (text.empty()) fail(ErrorKind::invalid_input, line_prefix(line_no) + "field \"" + field + "\" is empty");
  return text;
}

bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

}  // namespace

Sample parse_record(const std::string& line, std::size_t line_no, const LoadOptions& opts) {
  auto rec = ordered_json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (rec.is_discarded()) fail(ErrorKind::invalid_input, line_prefix(line_no) + "malformed record");
  if (!rec.is_object()) fail(ErrorKind::invalid_input, line_prefix(line_no) + "record is not an object");

  Sample s;
  s.instruction = required_text(rec, "instruction", line_no);
  s.response = required_text(rec, "output", line_no);
  if (auto it = rec.find("input"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) fail(ErrorKind::invalid_input, line_prefix(line_no) + "field \"input\" is not a string");
    if (auto in = it->get<std::string>(); !in.empty()) s.input = std::move(in);
  }

  std::optional<std::string> field_id;
  if (auto it = rec.find("id"); it != rec.end() && !it->is_null()) {
    if (it->is_string()) {
      field_id = it->get<std::string>();
    } else if (it->is_number_integer()) {
      field_id = it->dump();
    } else {
      fail(ErrorKind::invalid_input, line_prefix(line_no) + "field \"id\" must be a string or integer");
    }
    if (field_id->empty()) fail(ErrorKind::invalid_input, line_prefix(line_no) + "field \"id\" is empty");
  }
  s.id = (opts.id_policy == IdPolicy::use_field && field_id) ? *field_id
                                                             : content_id(s.instruction, s.input, s.response);

  for (auto& [key, value] : rec.items()) {
    if (key != "id" && key != "instruction" && key != "input" && key != "output") s.meta[key] = value;
  }
  s.source_record = line;
  if (!s.source_record.empty() && s.source_record.back() == '\r') s.source_record.pop_back();
  s.over_char_budget = s.instruction.size() + s.input.value_or("").size() + s.response.size() > opts.char_budget;
  return s;
}

Corpus load_corpus(const fs::path& path, const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open corpus " + path.string());

  std::vector<Sample> samples;
  std::map<SampleId, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    auto s = parse_record(line, line_no, opts);
    auto [it, inserted] = first_line.emplace(s.id, line_no);
    if (!inserted) {
      fail(ErrorKind::invalid_input, "duplicate id '" + s.id + "' at lines " + std::to_string(it->second) + " and " +
                                         std::to_string(line_no));
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) fail(ErrorKind::invalid_input, "corpus " + path.string() + " is empty");
  return Corpus(std::move(samples), sha256_file(path));
}

std::string to_record_line(const Sample& s) {
  if (!s.source_record.empty()) return s.source_record;
  ordered_json rec;
  rec["id"] = s.id;
  rec["instruction"] = s.instruction;
  if (s.input) rec["input"] = *s.input;
  rec["output"] = s.response;
  for (auto& [key, value] : s.meta.items()) rec[key] = value;
  return rec.dump();
}

void write_records(std::span<const Sample> samples, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  for (const auto& s : samples) out << to_record_line(s) << '\n';
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

// ---- templates -------------------------------------------------------------------------------

namespace {

struct Tag {
  enum Kind { placeholder, open, close } kind;
  std::string name;
  std::size_t begin;
  std::size_t end;  // one past '}'
};

bool ident_char(char c, bool first) {
  return c == '_' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (!first && c >= '0' && c <= '9');
}

// Recognizes `{name}`, `{#name}` and `{/name}` at `pos`; other braces are literal text.
std::optional<Tag> tag_at(const std::string& form, std::size_t pos) {
  if (form[pos] != '{') return std::nullopt;
  std::size_t i = pos + 1;
  Tag::Kind kind = Tag::placeholder;
  if (i < form.size() && (form[i] == '#' || form[i] == '/')) {
    kind = form[i] == '#' ? Tag::open : Tag::close;
    ++i;
  }
  std::size_t start = i;
  while (i < form.size() && ident_char(form[i], i == start)) ++i;
  if (i == start || i >= form.size() || form[i] != '}') return std::nullopt;
  return Tag{kind, form.substr(start, i - start), pos, i + 1};
}

std::vector<Tag> scan_tags(const std::string& form) {
  std::vector<Tag> tags;
  for (std::size_t i = 0; i < form.size(); ++i) {
    if (auto t = tag_at(form, i)) {
      i = t->end - 1;
      tags.push_back(std::move(*t));
    }
  }
  return tags;
}

using Bindings = std::map<std::string, std::optional<std::string>>;

std::string fill(const std::string& form, const Bindings& values) {
  std::string out;
  std::vector<std::string> open_sections;
  int skipping = 0;  // depth of sections being omitted
  std::size_t cursor = 0;
  for (const auto& tag : scan_tags(form)) {
    if (skipping == 0) out.append(form, cursor, tag.begin - cursor);
    cursor = tag.end;
    auto it = values.find(tag.name);
    if (it == values.end()) fail(ErrorKind::invalid_input, "template: unresolved placeholder {" + tag.name + "}");
    switch (tag.kind) {
      case Tag::open:
        open_sections.push_back(tag.name);
        if (skipping > 0 || !it->second) ++skipping;
        break;
      case Tag::close:
        if (open_sections.empty() || open_sections.back() != tag.name) {
          fail(ErrorKind::invalid_input, "template: unbalanced section {/" + tag.name + "}");
        }
        open_sections.pop_back();
        if (skipping > 0) --skipping;
        break;
      case Tag::placeholder:
        if (skipping > 0) break;
        if (!it->second) fail(ErrorKind::invalid_input, "template: no value for {" + tag.name + "}");
        out += *it->second;
        break;
    }
  }
  if (!open_sections.empty()) fail(ErrorKind::invalid_input, "template: unclosed section {#" + open_sections.back() + "}");
  if (skipping == 0) out.append(form, cursor, std::string::npos);
  return out;
}

std::map<std::string, int> placeholder_counts(const std::string& form) {
  std::map<std::string, int> counts;
  for (const auto& tag : scan_tags(form)) {
    if (tag.kind == Tag::placeholder) ++counts[tag.name];
  }
  return counts;
}

}  // namespace

PromptTemplate PromptTemplate::alpaca() {
  return from_zero_shot(
      "Below is an instruction that describes a task. Write a response that appropriately completes the request.\n\n"
      "### Instruction:\n{instruction}\n\n"
      "{#input}### Input:\n{input}\n\n{/input}"
      "### Response:\n");
}

PromptTemplate PromptTemplate::from_zero_shot(std::string zero_shot_form, std::string response_prefix) {
  PromptTemplate t;
  t.one_shot_form = "{demo_prompt}{demo_response}\n\n" + zero_shot_form;
  t.zero_shot_form = std::move(zero_shot_form);
  t.response_prefix = std::move(response_prefix);
  return t;
}

void PromptTemplate::validate() const {
  static const std::set<std::string> zero_names{"instruction", "input"};
  static const std::set<std::string> one_names{"instruction", "input", "demo_prompt", "demo_response"};
  auto check_names = [](const std::string& form, const std::set<std::string>& allowed) {
    for (const auto& tag : scan_tags(form)) {
      if (!allowed.contains(tag.name)) fail(ErrorKind::config, "template: unresolved placeholder {" + tag.name + "}");
    }
  };
  check_names(zero_shot_form, zero_names);
  check_names(one_shot_form, one_names);
  if (placeholder_counts(zero_shot_form)["instruction"] != 1) {
    fail(ErrorKind::config, "template: zero-shot form must contain {instruction} exactly once");
  }
  auto zero = placeholder_counts(zero_shot_form);
  auto one = placeholder_counts(one_shot_form);
  for (const auto& [name, n] : zero) {
    if (one[name] != 1) fail(ErrorKind::config, "template: one-shot form must contain {" + name + "} exactly once");
  }
  for (const char* name : {"demo_prompt", "demo_response"}) {
    if (one[name] != 1) fail(ErrorKind::config, std::string("template: one-shot form must contain {") + name + "} exactly once");
  }
}

std::string render_zero_shot(const PromptTemplate& t, const Sample& s) {
  return fill(t.zero_shot_form, {{"instruction", s.instruction}, {"input", s.input}}) + t.response_prefix;
}

std::string render_one_shot(const PromptTemplate& t, const Sample& demo, const Sample& target) {
  if (demo.id == target.id) fail(ErrorKind::invalid_input, "one-shot: sample '" + demo.id + "' cannot demonstrate itself");
  Bindings values{{"demo_prompt", render_zero_shot(t, demo)},
                  {"demo_response", demo.response},
                  {"instruction", target.instruction},
                  {"input", target.input}};
  return fill(t.one_shot_form, values) + t.response_prefix;
}

}  // namespace curate
