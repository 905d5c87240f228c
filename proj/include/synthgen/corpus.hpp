#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace synthgen {

enum class Task { kIntent, kTopic, kSentiment };
enum class Split { kTrain, kDev, kTest };
enum class Source { kGold, kGenerated };

std::string_view to_string(Task task);
std::string_view to_string(Split split);
std::string_view to_string(Source source);
Task parse_task(std::string_view name);
Split parse_split(std::string_view name);
Source parse_source(std::string_view name);

/// Number of labels in the reference datasets (MASSIVE subset, SIB-200,
/// binary sentiment).
std::size_t reference_label_count(Task task);

struct Language {
  std::string_view code;
  std::string_view name;
};

/// The eleven evaluation languages, ordered by code.
std::span<const Language> evaluation_languages();
std::optional<std::string_view> language_name(std::string_view code);
bool is_evaluation_language(std::string_view code);

struct LabelSpec {
  std::string name;
  std::optional<std::string> summary;

  bool operator==(const LabelSpec&) const = default;
};

struct LabeledExample {
  std::string id;
  std::string text;
  std::string label;
  std::string language;
  Split split = Split::kTrain;
  Source source = Source::kGold;
  std::map<std::string, std::string> meta;

  bool operator==(const LabeledExample&) const = default;
};

nlohmann::json to_json(const LabeledExample& example);
LabeledExample example_from_json(const nlohmann::json& j);

struct Dataset {
  Task task = Task::kIntent;
  std::vector<LabelSpec> labels;
  std::vector<LabeledExample> examples;
  std::string language;

  bool has_label(std::string_view name) const;
  const LabelSpec& label(std::string_view name) const;
  std::vector<std::string> label_names() const;
  std::size_t count(std::string_view label) const;
  /// Examples of `label` restricted to `split`, in insertion order.
  std::vector<LabeledExample> select(std::string_view label, std::optional<Split> split = {}) const;
  /// Throws DataError if any example violates the dataset invariants.
  void validate() const;
};

/// RFC 4180 fields of one line. nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_csv_line(const std::string& line);

enum class InputFormat { kJsonl, kCsv, kTsv };
InputFormat parse_input_format(std::string_view name);

struct IngestOptions {
  InputFormat format = InputFormat::kJsonl;
  /// Source column -> role. Roles: text, label, id, split, language.
  std::map<std::string, std::string> field_map;
  Task task = Task::kIntent;
  std::string language;
  /// Declared label set. When empty the set is inferred in first-seen order.
  std::vector<std::string> labels;
  Split default_split = Split::kTrain;
  std::size_t max_malformed = 0;
  bool allow_any_language = false;
};

struct RejectedRow {
  std::size_t line = 0;  // 1-based physical line (header is line 1 for csv/tsv)
  std::string reason;
  std::string raw;
};

struct IngestResult {
  Dataset dataset;
  std::vector<RejectedRow> rejected;   // well-formed but unusable rows
  std::vector<RejectedRow> malformed;  // rows that could not be parsed
};

IngestResult ingest_dataset(const std::filesystem::path& path, const IngestOptions& options);

/// Draws k distinct train-split examples of `label`, uniformly without
/// replacement. Same seed, same selection.
std::vector<LabeledExample> sample_demonstrations(const Dataset& dataset, std::string_view label,
                                                  std::size_t k, std::uint64_t seed);

/// Lowercases, drops Unicode punctuation (P*), collapses whitespace, trims.
std::string normalize_for_training(std::string_view text);

struct BalancedCorpus {
  Dataset dataset;
  std::map<std::string, std::size_t> shortfall;  // only labels that fell short
  bool complete() const { return shortfall.empty(); }
};

BalancedCorpus assemble_balanced(const Dataset& pool, std::size_t per_label);

struct TrainDevSplit {
  Dataset train;
  Dataset dev;
};

/// Stratified, seeded split of a generated pool. Each label contributes
/// round(n * dev_fraction) examples to dev.
TrainDevSplit split_train_dev(const Dataset& pool, double dev_fraction, std::uint64_t seed);

std::vector<LabeledExample> read_jsonl(const std::filesystem::path& path);
/// Serializes examples in corpus schema, one object per LF-terminated line.
std::string to_jsonl(std::span<const LabeledExample> examples);
void write_jsonl(const std::filesystem::path& path, std::span<const LabeledExample> examples);

/// Builds a dataset from corpus-schema JSONL, inferring labels in first-seen
/// order unless `labels` is given.
Dataset load_corpus(const std::filesystem::path& path, Task task,
                    const std::vector<std::string>& labels = {});

}  // namespace synthgen
