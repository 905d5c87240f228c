#include "synthgen/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "synthgen/error.hpp"
#include "synthgen/fsutil.hpp"
#include "synthgen/random.hpp"
#include "synthgen/unicode.hpp"

namespace synthgen {
namespace {

constexpr std::array<Language, 11> kLanguages{{
    {"az", "Azerbaijani"},
    {"cy", "Welsh"},
    {"de", "German"},
    {"en", "English"},
    {"he", "Hebrew"},
    {"id", "Indonesian"},
    {"ro", "Romanian"},
    {"sl", "Slovenian"},
    {"sw", "Swahili"},
    {"te", "Telugu"},
    {"th", "Thai"},
}};

}  // namespace

std::optional<std::vector<std::string>> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) return std::nullopt;
  fields.push_back(std::move(field));
  return fields;
}

namespace {

std::vector<std::string> split_tsv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) fields.push_back(field);
  if (!line.empty() && line.back() == '\t') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

const std::set<std::string, std::less<>> kRoles{"text", "label", "id", "split", "language"};

}  // namespace

std::string_view to_string(Task task) {
  switch (task) {
    case Task::kIntent: return "intent";
    case Task::kTopic: return "topic";
    case Task::kSentiment: return "sentiment";
  }
  return "?";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

std::string_view to_string(Source source) {
  return source == Source::kGold ? "gold" : "generated";
}

Task parse_task(std::string_view name) {
  if (name == "intent") return Task::kIntent;
  if (name == "topic") return Task::kTopic;
  if (name == "sentiment") return Task::kSentiment;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected intent, topic or sentiment)");
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(name) + "'");
}

Source parse_source(std::string_view name) {
  if (name == "gold") return Source::kGold;
  if (name == "generated") return Source::kGenerated;
  throw DataError("unknown source '" + std::string(name) + "'");
}

std::size_t reference_label_count(Task task) {
  switch (task) {
    case Task::kIntent: return 10;
    case Task::kTopic: return 7;
    case Task::kSentiment: return 2;
  }
  return 0;
}

std::span<const Language> evaluation_languages() { return kLanguages; }

std::optional<std::string_view> language_name(std::string_view code) {
  for (const auto& lang : kLanguages) {
    if (lang.code == code) return lang.name;
  }
  return std::nullopt;
}

bool is_evaluation_language(std::string_view code) { return language_name(code).has_value(); }

nlohmann::json to_json(const LabeledExample& e) {
  nlohmann::json meta = nlohmann::json::object();
  for (const auto& [k, v] : e.meta) meta[k] = v;
  return {{"id", e.id},
          {"text", e.text},
          {"label", e.label},
          {"language", e.language},
          {"split", to_string(e.split)},
          {"source", to_string(e.source)},
          {"meta", meta}};
}

LabeledExample example_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("corpus record must be a JSON object");
  LabeledExample e;
  try {
    e.id = j.at("id").get<std::string>();
    e.text = j.at("text").get<std::string>();
    e.label = j.at("label").get<std::string>();
    e.language = j.at("language").get<std::string>();
    e.split = parse_split(j.at("split").get<std::string>());
    e.source = parse_source(j.at("source").get<std::string>());
    if (auto it = j.find("meta"); it != j.end()) {
      for (const auto& [k, v] : it->items()) e.meta[k] = v.get<std::string>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("bad corpus record: ") + ex.what());
  }
  return e;
}

bool Dataset::has_label(std::string_view name) const {
  return std::any_of(labels.begin(), labels.end(), [&](const LabelSpec& l) { return l.name == name; });
}

const LabelSpec& Dataset::label(std::string_view name) const {
  for (const auto& l : labels) {
    if (l.name == name) return l;
  }
  throw DataError("unknown label '" + std::string(name) + "'");
}

std::vector<std::string> Dataset::label_names() const {
  std::vector<std::string> names;
  names.reserve(labels.size());
  for (const auto& l : labels) names.push_back(l.name);
  return names;
}

std::size_t Dataset::count(std::string_view name) const {
  return static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(), [&](const auto& e) { return e.label == name; }));
}

std::vector<LabeledExample> Dataset::select(std::string_view name, std::optional<Split> split) const {
  std::vector<LabeledExample> out;
  for (const auto& e : examples) {
    if (e.label == name && (!split || e.split == *split)) out.push_back(e);
  }
  return out;
}

void Dataset::validate() const {
  std::set<std::string, std::less<>> names;
  for (const auto& l : labels) {
    if (!names.insert(l.name).second) throw DataError("duplicate label '" + l.name + "'");
    if (l.summary && unicode::trim(*l.summary).empty()) {
      throw DataError("label '" + l.name + "' has an empty summary");
    }
  }
  for (const auto& e : examples) {
    if (unicode::trim(e.text).empty()) throw DataError("example '" + e.id + "' has empty text");
    if (!names.contains(e.label)) {
      throw DataError("example '" + e.id + "' has label '" + e.label + "' outside the label set");
    }
  }
}

InputFormat parse_input_format(std::string_view name) {
  if (name == "jsonl") return InputFormat::kJsonl;
  if (name == "csv") return InputFormat::kCsv;
  if (name == "tsv") return InputFormat::kTsv;
  throw ConfigError("unknown input format '" + std::string(name) + "'");
}

IngestResult ingest_dataset(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read dataset file " + path.string());
  if (!options.allow_any_language && !options.language.empty() &&
      !is_evaluation_language(options.language)) {
    throw ConfigError("language '" + options.language + "' is not one of the evaluation languages");
  }

  // role -> source column
  std::map<std::string, std::string, std::less<>> column_of;
  for (const auto& [column, role] : options.field_map) {
    if (!kRoles.contains(role)) throw ConfigError("unknown field role '" + role + "'");
    column_of[role] = column;
  }
  if (options.format == InputFormat::kJsonl) {
    for (const char* role : {"text", "label", "id", "split", "language"}) {
      column_of.try_emplace(role, role);
    }
  }
  if (!column_of.contains("text") || !column_of.contains("label")) {
    throw ConfigError("field_map must assign the text and label roles");
  }

  IngestResult result;
  Dataset& ds = result.dataset;
  ds.task = options.task;
  ds.language = options.language;
  const bool declared_labels = !options.labels.empty();
  for (const auto& name : options.labels) ds.labels.push_back({name, std::nullopt});

  auto malformed = [&](std::size_t line, std::string reason, std::string raw) {
    result.malformed.push_back({line, std::move(reason), std::move(raw)});
    if (result.malformed.size() > options.max_malformed) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": malformed row (" +
                      result.malformed.back().reason + "); tolerance is " +
                      std::to_string(options.max_malformed));
    }
  };

  auto accept = [&](std::size_t line, const std::string& raw,
                    const std::map<std::string, std::string, std::less<>>& fields) {
    auto get = [&](std::string_view role) -> std::optional<std::string> {
      auto c = column_of.find(role);
      if (c == column_of.end()) return std::nullopt;
      auto f = fields.find(c->second);
      if (f == fields.end()) return std::nullopt;
      return f->second;
    };
    auto text = get("text");
    auto label = get("label");
    if (!text || !label) {
      malformed(line, "missing text or label field", raw);
      return;
    }
    LabeledExample e;
    e.text = *text;
    e.label = unicode::trim(*label);
    e.id = get("id").value_or(path.stem().string() + "-" + std::to_string(line));
    e.language = get("language").value_or(options.language);
    e.source = Source::kGold;
    e.split = options.default_split;
    if (auto s = get("split")) {
      try {
        e.split = parse_split(*s);
      } catch (const DataError&) {
        malformed(line, "unknown split '" + *s + "'", raw);
        return;
      }
    }
    if (unicode::trim(e.text).empty()) {
      result.rejected.push_back({line, "empty text", raw});
      return;
    }
    if (!ds.has_label(e.label)) {
      if (declared_labels) {
        result.rejected.push_back({line, "unknown label '" + e.label + "'", raw});
        return;
      }
      ds.labels.push_back({e.label, std::nullopt});
    }
    ds.examples.push_back(std::move(e));
  };

  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, raw)) {
    ++line_no;
    raw = strip_cr(std::move(raw));
    if (options.format == InputFormat::kJsonl) {
      if (unicode::trim(raw).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(raw);
      } catch (const nlohmann::json::parse_error& ex) {
        malformed(line_no, "invalid JSON", raw);
        continue;
      }
      if (!j.is_object()) {
        malformed(line_no, "record is not an object", raw);
        continue;
      }
      std::map<std::string, std::string, std::less<>> fields;
      for (const auto& [k, v] : j.items()) {
        if (v.is_string()) fields[k] = v.get<std::string>();
        else if (v.is_number() || v.is_boolean()) fields[k] = v.dump();
      }
      accept(line_no, raw, fields);
      continue;
    }
    std::optional<std::vector<std::string>> cells =
        options.format == InputFormat::kCsv ? split_csv_line(raw) : std::optional(split_tsv_line(raw));
    if (line_no == 1) {
      if (!cells) throw DataError(path.string() + ": unreadable header row");
      header = *cells;
      continue;
    }
    if (raw.empty()) continue;
    if (!cells || cells->size() != header.size()) {
      malformed(line_no, "expected " + std::to_string(header.size()) + " columns", raw);
      continue;
    }
    std::map<std::string, std::string, std::less<>> fields;
    for (std::size_t i = 0; i < header.size(); ++i) fields[header[i]] = (*cells)[i];
    accept(line_no, raw, fields);
  }
  if (in.bad()) throw DataError("read error on " + path.string());
  return result;
}

std::vector<LabeledExample> sample_demonstrations(const Dataset& dataset, std::string_view label,
                                                  std::size_t k, std::uint64_t seed) {
  auto candidates = dataset.select(label, Split::kTrain);
  if (candidates.size() < k) {
    throw DataError("label '" + std::string(label) + "' has " + std::to_string(candidates.size()) +
                    " train examples; " + std::to_string(k) + " demonstrations requested");
  }
  Rng rng(derive_seed(seed, "demos/" + std::string(label)));
  // Partial Fisher-Yates over the first k slots.
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + rng.index(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(k);
  return candidates;
}

std::string normalize_for_training(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char32_t cp : unicode::decode(unicode::to_lower(text))) {
    if (unicode::is_punctuation(cp)) continue;
    if (unicode::is_whitespace(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    unicode::append_utf8(out, cp);
  }
  return out;
}

BalancedCorpus assemble_balanced(const Dataset& pool, std::size_t per_label) {
  BalancedCorpus result;
  result.dataset.task = pool.task;
  result.dataset.labels = pool.labels;
  result.dataset.language = pool.language;
  std::map<std::string, std::size_t, std::less<>> taken;
  for (const auto& e : pool.examples) {
    auto& n = taken[e.label];
    if (n < per_label) {
      result.dataset.examples.push_back(e);
      ++n;
    }
  }
  for (const auto& l : pool.labels) {
    const auto n = taken[l.name];
    if (n < per_label) result.shortfall[l.name] = per_label - n;
  }
  return result;
}

TrainDevSplit split_train_dev(const Dataset& pool, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction >= 0.0 && dev_fraction < 1.0)) {
    throw ConfigError("dev fraction must be in [0, 1)");
  }
  std::set<std::size_t> dev_rows;
  for (const auto& l : pool.labels) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < pool.examples.size(); ++i) {
      if (pool.examples[i].label == l.name) rows.push_back(i);
    }
    const auto n_dev = static_cast<std::size_t>(std::lround(static_cast<double>(rows.size()) * dev_fraction));
    Rng rng(derive_seed(seed, "dev-split/" + l.name));
    for (std::size_t i = 0; i < n_dev; ++i) {
      const auto j = i + rng.index(rows.size() - i);
      std::swap(rows[i], rows[j]);
      dev_rows.insert(rows[i]);
    }
  }
  TrainDevSplit out;
  for (Dataset* d : {&out.train, &out.dev}) {
    d->task = pool.task;
    d->labels = pool.labels;
    d->language = pool.language;
  }
  for (std::size_t i = 0; i < pool.examples.size(); ++i) {
    auto e = pool.examples[i];
    const bool dev = dev_rows.contains(i);
    e.split = dev ? Split::kDev : Split::kTrain;
    (dev ? out.dev : out.train).examples.push_back(std::move(e));
  }
  return out;
}

std::vector<LabeledExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
    } catch (const DataError& ex) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

std::string to_jsonl(std::span<const LabeledExample> examples) {
  std::string out;
  for (const auto& e : examples) {
    out += to_json(e).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    out.push_back('\n');
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const LabeledExample> examples) {
  write_file_atomic(path, to_jsonl(examples));
}

Dataset load_corpus(const std::filesystem::path& path, Task task, const std::vector<std::string>& labels) {
  Dataset ds;
  ds.task = task;
  for (const auto& l : labels) ds.labels.push_back({l, std::nullopt});
  ds.examples = read_jsonl(path);
  for (const auto& e : ds.examples) {
    if (ds.language.empty()) ds.language = e.language;
    if (!ds.has_label(e.label)) {
      if (!labels.empty()) throw DataError(path.string() + ": label '" + e.label + "' not in label set");
      ds.labels.push_back({e.label, std::nullopt});
    }
  }
  return ds;
}

}  // namespace synthgen
