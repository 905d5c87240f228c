#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "synthgen/corpus.hpp"
#include "synthgen/metrics.hpp"

namespace synthgen {

/// Strategy key of the gold-data upper-bound row.
inline constexpr std::string_view kGoldStrategy = "gold";

enum class Dimension { kLanguage, kModel };
Dimension parse_dimension(std::string_view name);

struct CellKey {
  Task task = Task::kIntent;
  std::string language;
  std::string model;
  std::string strategy;  // cli name or "gold"

  auto operator<=>(const CellKey&) const = default;
};

/// Metric reports over task x language x model x strategy. F1 values live in [0, 1].
class ResultsGrid {
 public:
  void add(const CellKey& key, MetricReport report);
  const MetricReport* find(const CellKey& key) const;
  const std::map<CellKey, MetricReport>& cells() const { return cells_; }

  /// Insertion order.
  std::vector<std::string> languages(Task task) const;
  std::vector<std::string> models(Task task) const;
  /// Gold first, then the seven strategies in table order, then anything else.
  std::vector<std::string> strategies(Task task) const;
  std::vector<Task> tasks() const;

  /// Gold cell for a (task, language): same model if present, else the
  /// first gold cell of that language.
  const MetricReport* gold_for(Task task, const std::string& language, const std::string& model) const;

  /// Non-gold cells without a gold counterpart.
  std::vector<std::string> validate() const;

  /// CSV with header task,language,model,strategy,f1 and optional
  /// ci_low,ci_high columns.
  static ResultsGrid load_csv(const std::filesystem::path& path);
  void add_trainer_result(const CellKey& key, const nlohmann::json& result);
  void load_trainer_result(const CellKey& key, const std::filesystem::path& path);

 private:
  std::map<CellKey, MetricReport> cells_;
  std::vector<CellKey> order_;
};

/// Trainer output {"per_seed_f1", "mean_f1", "epochs_run", "config"} as a report.
MetricReport report_from_trainer_result(const nlohmann::json& result);

enum class Mark { kNone, kBold, kUnderline };

struct TableCell {
  std::optional<double> value;  // percentage points
  Mark mark = Mark::kNone;
};

struct TableRow {
  std::string key;      // "gold" or strategy cli name
  std::string display;  // row title
  bool gold = false;
  std::vector<TableCell> cells;  // one per column, avg last
};

struct ResultsTable {
  Task task = Task::kIntent;
  Dimension group_by = Dimension::kLanguage;
  std::vector<std::string> columns;  // last is "avg"
  std::vector<TableRow> rows;
  std::vector<std::string> footnotes;
  std::vector<std::string> warnings;

  const TableRow* row(std::string_view key) const;
  std::string to_markdown() const;
  /// Full-precision values; missing cells are empty fields.
  std::string to_csv() const;
};

struct ParsedTable {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> rows;
};

ParsedTable parse_table_csv(std::string_view csv);

/// One column per language (or model) plus the unweighted row mean. Cells
/// average over the other dimension. Best and second best per column are
/// marked; the gold row is never marked.
ResultsTable results_table(const ResultsGrid& grid, Task task, Dimension group_by = Dimension::kLanguage);

struct DiffScope {
  std::vector<Task> tasks;  // empty = all
  std::vector<std::string> languages;
  std::vector<std::string> models;
  bool include_gold = false;

  bool covers(const CellKey& key) const;
};

struct StrategyDiff {
  std::string strategy;
  double mean = 0.0;  // percentage points, gold minus strategy
  std::vector<std::pair<CellKey, double>> cells;
};

struct DiffResult {
  std::vector<StrategyDiff> strategies;  // table order
  std::string best;
  std::string second;

  const StrategyDiff* find(std::string_view strategy) const;
};

DiffResult diff_to_gold(const ResultsGrid& grid, const DiffScope& scope = {});

enum class CorrelationScope { kPooled, kPerTaskMean };
enum class SimilarityMetric { kTfidf, kEmbedding, kNgramDiversity };

/// Pearson r between a similarity metric and F1 over non-gold cells.
double metric_f1_correlation(const ResultsGrid& grid, SimilarityMetric metric, CorrelationScope scope);

enum class ChartKind { kDiffBars, kSeedSweep };
ChartKind parse_chart_kind(std::string_view name);

struct ChartPoint {
  std::string group;
  std::string series;
  double value = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
};

/// Mean gap to gold per (language or model, strategy) for one task.
std::vector<ChartPoint> diff_bar_points(const ResultsGrid& grid, Task task, Dimension group_by = Dimension::kLanguage);

struct SweepResult {
  std::string series;
  std::size_t k = 0;
  std::vector<double> scores;  // one per seed, F1 in [0, 1]
};

/// Mean and CI per (k, series) in percentage points.
std::vector<ChartPoint> seed_sweep_points(const std::vector<SweepResult>& results, double ci_level = 0.95);

std::string chart_csv(const std::vector<ChartPoint>& points);
std::string chart_svg(const std::vector<ChartPoint>& points, ChartKind kind);

struct ChartFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
};

/// Writes <out>.csv and <out>.svg.
ChartFiles emit_chart_data(const std::vector<ChartPoint>& points, ChartKind kind, const std::filesystem::path& out);

}  // namespace synthgen
