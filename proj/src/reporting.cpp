#include "synthgen/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "synthgen/error.hpp"
#include "synthgen/fsutil.hpp"
#include "synthgen/strategies.hpp"

namespace synthgen {
namespace {

std::string fmt2(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string full(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::optional<double> mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

std::string row_title(const std::string& key) {
  if (key == kGoldStrategy) return "Gold Data";
  try {
    return std::string(display_name(parse_strategy(key)));
  } catch (const ConfigError&) {
    return key;
  }
}

double parse_number(const std::string& field, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw DataError("bad number '" + field + "' in " + what);
  }
}

template <typename T>
bool in_filter(const std::vector<T>& filter, const T& value) {
  return filter.empty() || std::find(filter.begin(), filter.end(), value) != filter.end();
}

// Ranks non-gold rows of one column: bold for the best, underline for the
// runner-up. Rows earlier in the table win ties.
void mark_column(std::vector<TableRow>& rows, std::size_t col, const std::string& column,
                 std::vector<std::string>& footnotes) {
  std::vector<std::size_t> order;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].gold && rows[r].cells[col].value) order.push_back(r);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return *rows[a].cells[col].value > *rows[b].cells[col].value; });
  if (order.empty()) return;
  rows[order[0]].cells[col].mark = Mark::kBold;
  if (order.size() > 1) rows[order[1]].cells[col].mark = Mark::kUnderline;
  for (std::size_t i = 0; i + 1 < order.size() && i < 2; ++i) {
    const double v = *rows[order[i]].cells[col].value;
    std::vector<std::string> tied;
    for (std::size_t j = i; j < order.size() && *rows[order[j]].cells[col].value == v; ++j) {
      tied.push_back(rows[order[j]].key);
    }
    if (tied.size() < 2 || (i > 0 && *rows[order[i - 1]].cells[col].value == v)) continue;
    std::string note = column + ": ";
    for (std::size_t t = 0; t < tied.size(); ++t) note += (t ? ", " : "") + tied[t];
    note += " tie at " + fmt2(v) + "; the first listed row takes the higher mark.";
    footnotes.push_back(std::move(note));
  }
}

}  // namespace

Dimension parse_dimension(std::string_view name) {
  if (name == "language" || name == "lang") return Dimension::kLanguage;
  if (name == "model") return Dimension::kModel;
  throw ConfigError("unknown grouping '" + std::string(name) + "' (expected language or model)");
}

void ResultsGrid::add(const CellKey& key, MetricReport report) {
  if (cells_.insert_or_assign(key, std::move(report)).second) order_.push_back(key);
}

const MetricReport* ResultsGrid::find(const CellKey& key) const {
  const auto it = cells_.find(key);
  return it == cells_.end() ? nullptr : &it->second;
}

std::vector<std::string> ResultsGrid::languages(Task task) const {
  std::vector<std::string> out;
  for (const auto& k : order_) {
    if (k.task == task && std::find(out.begin(), out.end(), k.language) == out.end()) out.push_back(k.language);
  }
  return out;
}

std::vector<std::string> ResultsGrid::models(Task task) const {
  std::vector<std::string> out;
  for (const auto& k : order_) {
    if (k.task == task && k.strategy != kGoldStrategy && std::find(out.begin(), out.end(), k.model) == out.end()) {
      out.push_back(k.model);
    }
  }
  return out;
}

std::vector<std::string> ResultsGrid::strategies(Task task) const {
  std::set<std::string> present;
  for (const auto& k : order_) {
    if (k.task == task) present.insert(k.strategy);
  }
  std::vector<std::string> out;
  if (present.erase(std::string(kGoldStrategy))) out.emplace_back(kGoldStrategy);
  for (auto kind : all_strategies()) {
    if (present.erase(std::string(cli_name(kind)))) out.emplace_back(cli_name(kind));
  }
  for (const auto& k : order_) {
    if (k.task == task && present.erase(k.strategy)) out.push_back(k.strategy);
  }
  return out;
}

std::vector<Task> ResultsGrid::tasks() const {
  std::vector<Task> out;
  for (const auto& k : order_) {
    if (std::find(out.begin(), out.end(), k.task) == out.end()) out.push_back(k.task);
  }
  return out;
}

const MetricReport* ResultsGrid::gold_for(Task task, const std::string& language, const std::string& model) const {
  if (const auto* exact = find({task, language, model, std::string(kGoldStrategy)})) return exact;
  for (const auto& k : order_) {
    if (k.task == task && k.language == language && k.strategy == kGoldStrategy) return &cells_.at(k);
  }
  return nullptr;
}

std::vector<std::string> ResultsGrid::validate() const {
  std::vector<std::string> problems;
  for (const auto& k : order_) {
    if (k.strategy != kGoldStrategy && gold_for(k.task, k.language, k.model) == nullptr) {
      problems.push_back("no gold cell for " + std::string(to_string(k.task)) + "/" + k.language + " (needed by " +
                         k.model + "/" + k.strategy + ")");
    }
  }
  return problems;
}

ResultsGrid ResultsGrid::load_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty results file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (!header) throw DataError(path.string() + ": bad header");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header->size(); ++i) col[(*header)[i]] = i;
  for (const char* need : {"task", "language", "model", "strategy", "f1"}) {
    if (!col.contains(need)) throw DataError(path.string() + ": missing column '" + need + "'");
  }
  ResultsGrid grid;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (!f || f->size() != header->size()) throw DataError(where + ": wrong field count");
    CellKey key{parse_task((*f)[col["task"]]), (*f)[col["language"]], (*f)[col["model"]], (*f)[col["strategy"]]};
    MetricReport r;
    r.f1_mean = parse_number((*f)[col["f1"]], where);
    if (r.f1_mean < 0.0 || r.f1_mean > 1.0) throw DataError(where + ": f1 must lie in [0, 1]");
    r.f1_ci_low = col.contains("ci_low") && !(*f)[col["ci_low"]].empty() ? parse_number((*f)[col["ci_low"]], where)
                                                                          : r.f1_mean;
    r.f1_ci_high = col.contains("ci_high") && !(*f)[col["ci_high"]].empty()
                       ? parse_number((*f)[col["ci_high"]], where)
                       : r.f1_mean;
    grid.add(key, std::move(r));
  }
  return grid;
}

MetricReport report_from_trainer_result(const nlohmann::json& result) {
  MetricReport r;
  try {
    auto scores = result.at("per_seed_f1").get<std::vector<double>>();
    const double mean = result.at("mean_f1").get<double>();
    if (scores.empty()) throw DataError("trainer result has no per-seed scores");
    for (double s : scores) {
      if (s < 0.0 || s > 1.0) throw DataError("trainer result F1 outside [0, 1]");
    }
    if (!result.at("epochs_run").is_array()) throw DataError("trainer result epochs_run must be an array");
    r.set_seed_scores(std::move(scores));
    r.f1_mean = mean;
    r.metric_config = {{"trainer", result.value("config", nlohmann::json::object())}};
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("bad trainer result: ") + ex.what());
  }
  return r;
}

void ResultsGrid::add_trainer_result(const CellKey& key, const nlohmann::json& result) {
  add(key, report_from_trainer_result(result));
}

void ResultsGrid::load_trainer_result(const CellKey& key, const std::filesystem::path& path) {
  try {
    add_trainer_result(key, nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& ex) {
    throw DataError(path.string() + ": " + ex.what());
  }
}

const TableRow* ResultsTable::row(std::string_view key) const {
  for (const auto& r : rows) {
    if (r.key == key) return &r;
  }
  return nullptr;
}

std::string ResultsTable::to_markdown() const {
  std::string out = "| " + std::string(to_string(task)) + " |";
  for (const auto& c : columns) out += " " + c + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) out += "---:|";
  out += "\n";
  for (const auto& r : rows) {
    out += "| " + r.display + " |";
    for (const auto& c : r.cells) {
      std::string text = c.value ? fmt2(*c.value) : "—";
      if (c.value && r.gold) text = "*" + text + "*";
      if (c.mark == Mark::kBold) text = "**" + text + "**";
      if (c.mark == Mark::kUnderline) text = "_<u>" + text + "</u>_";
      out += " " + text + " |";
    }
    out += "\n";
  }
  std::size_t n = 1;
  for (const auto& f : footnotes) out += "\n[" + std::to_string(n++) + "] " + f + "\n";
  for (const auto& w : warnings) out += "\nWarning: " + w + "\n";
  return out;
}

std::string ResultsTable::to_csv() const {
  std::string out = "row";
  for (const auto& c : columns) out += "," + csv_field(c);
  out += "\n";
  for (const auto& r : rows) {
    out += csv_field(r.key);
    for (const auto& c : r.cells) out += "," + (c.value ? full(*c.value) : std::string());
    out += "\n";
  }
  return out;
}

ParsedTable parse_table_csv(std::string_view csv) {
  ParsedTable t;
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty table csv");
  auto header = split_csv_line(line);
  if (!header || header->empty() || header->front() != "row") throw DataError("table csv needs a 'row' header");
  t.columns.assign(header->begin() + 1, header->end());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (!f || f->size() != header->size()) throw DataError("table csv row has the wrong field count");
    std::vector<std::optional<double>> values;
    for (std::size_t i = 1; i < f->size(); ++i) {
      values.push_back((*f)[i].empty() ? std::nullopt : std::optional(parse_number((*f)[i], "table csv")));
    }
    t.rows.emplace_back(f->front(), std::move(values));
  }
  return t;
}

ResultsTable results_table(const ResultsGrid& grid, Task task, Dimension group_by) {
  ResultsTable t;
  t.task = task;
  t.group_by = group_by;
  const auto languages = grid.languages(task);
  const auto models = grid.models(task);
  const auto strategies = grid.strategies(task);
  if (strategies.empty()) throw DataError("results grid has no cells for task " + std::string(to_string(task)));
  t.columns = group_by == Dimension::kLanguage ? languages : models;
  if (group_by == Dimension::kModel && t.columns.empty()) t.columns = {"gold"};

  std::set<std::string> missing;
  for (const auto& strategy : strategies) {
    TableRow row;
    row.key = strategy;
    row.display = row_title(strategy);
    row.gold = strategy == kGoldStrategy;
    std::vector<double> present;
    for (const auto& column : t.columns) {
      std::vector<double> values;
      const auto& others = group_by == Dimension::kLanguage ? models : languages;
      const std::vector<std::string> fallback{std::string()};
      for (const auto& other : others.empty() ? fallback : others) {
        const auto& lang = group_by == Dimension::kLanguage ? column : other;
        const auto& model = group_by == Dimension::kLanguage ? other : column;
        const MetricReport* r = row.gold ? grid.gold_for(task, lang, model) : grid.find({task, lang, model, strategy});
        if (r) {
          values.push_back(r->f1_mean * 100.0);
        } else {
          missing.insert(strategy + " @ " + lang + "/" + model);
        }
      }
      const auto v = mean_of(values);
      if (!v) missing.insert(strategy + " @ " + column);
      if (v) present.push_back(*v);
      row.cells.push_back({v, Mark::kNone});
    }
    row.cells.push_back({present.size() == t.columns.size() ? mean_of(present) : std::nullopt, Mark::kNone});
    t.rows.push_back(std::move(row));
  }
  if (!missing.empty()) {
    std::string w = "incomplete grid; missing cells: ";
    std::size_t i = 0;
    for (const auto& m : missing) w += (i++ ? ", " : "") + m;
    t.warnings.push_back(std::move(w));
  }
  t.columns.emplace_back("avg");
  for (std::size_t c = 0; c < t.columns.size(); ++c) mark_column(t.rows, c, t.columns[c], t.footnotes);
  return t;
}

bool DiffScope::covers(const CellKey& key) const {
  return in_filter(tasks, key.task) && in_filter(languages, key.language) && in_filter(models, key.model);
}

const StrategyDiff* DiffResult::find(std::string_view strategy) const {
  for (const auto& s : strategies) {
    if (s.strategy == strategy) return &s;
  }
  return nullptr;
}

DiffResult diff_to_gold(const ResultsGrid& grid, const DiffScope& scope) {
  std::vector<std::string> order;
  for (auto task : grid.tasks()) {
    for (const auto& s : grid.strategies(task)) {
      if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
    }
  }
  DiffResult out;
  for (const auto& strategy : order) {
    const bool gold_row = strategy == kGoldStrategy;
    if (gold_row && !scope.include_gold) continue;
    StrategyDiff d;
    d.strategy = strategy;
    for (const auto& [key, report] : grid.cells()) {
      if (key.strategy != strategy || !scope.covers(key)) continue;
      const MetricReport* gold = gold_row ? &report : grid.gold_for(key.task, key.language, key.model);
      if (gold == nullptr) {
        throw DataError("no gold cell for " + std::string(to_string(key.task)) + "/" + key.language);
      }
      d.cells.emplace_back(key, (gold->f1_mean - report.f1_mean) * 100.0);
    }
    if (d.cells.empty()) continue;
    double sum = 0.0;
    for (const auto& [_, v] : d.cells) sum += v;
    d.mean = sum / static_cast<double>(d.cells.size());
    out.strategies.push_back(std::move(d));
  }
  std::vector<const StrategyDiff*> ranked;
  for (const auto& s : out.strategies) {
    if (s.strategy != kGoldStrategy) ranked.push_back(&s);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](auto* a, auto* b) { return a->mean < b->mean; });
  if (!ranked.empty()) out.best = ranked[0]->strategy;
  if (ranked.size() > 1) out.second = ranked[1]->strategy;
  return out;
}

double metric_f1_correlation(const ResultsGrid& grid, SimilarityMetric metric, CorrelationScope scope) {
  auto pick = [&](const MetricReport& r) -> std::optional<double> {
    switch (metric) {
      case SimilarityMetric::kTfidf: return r.tfidf_sim;
      case SimilarityMetric::kEmbedding: return r.embed_sim;
      case SimilarityMetric::kNgramDiversity: return r.ngram_div;
    }
    return std::nullopt;
  };
  std::map<Task, std::pair<std::vector<double>, std::vector<double>>> per_task;
  std::vector<double> xs, ys;
  for (const auto& [key, r] : grid.cells()) {
    if (key.strategy == kGoldStrategy) continue;
    const auto x = pick(r);
    if (!x) continue;
    per_task[key.task].first.push_back(*x);
    per_task[key.task].second.push_back(r.f1_mean);
    xs.push_back(*x);
    ys.push_back(r.f1_mean);
  }
  if (scope == CorrelationScope::kPooled) return pearson(xs, ys);
  if (per_task.empty()) throw DataError("no cells carry the requested metric");
  double sum = 0.0;
  for (const auto& [_, p] : per_task) sum += pearson(p.first, p.second);
  return sum / static_cast<double>(per_task.size());
}

ChartKind parse_chart_kind(std::string_view name) {
  if (name == "diff_bars" || name == "diff-bars") return ChartKind::kDiffBars;
  if (name == "seed_sweep" || name == "seed-sweep") return ChartKind::kSeedSweep;
  throw ConfigError("unknown chart kind '" + std::string(name) + "' (expected diff_bars or seed_sweep)");
}

std::vector<ChartPoint> diff_bar_points(const ResultsGrid& grid, Task task, Dimension group_by) {
  const auto groups = group_by == Dimension::kLanguage ? grid.languages(task) : grid.models(task);
  std::vector<ChartPoint> points;
  for (const auto& group : groups) {
    DiffScope scope;
    scope.tasks = {task};
    if (group_by == Dimension::kLanguage) {
      scope.languages = {group};
    } else {
      scope.models = {group};
    }
    for (const auto& s : diff_to_gold(grid, scope).strategies) points.push_back({group, s.strategy, s.mean, {}, {}});
  }
  if (points.empty()) throw DataError("no strategy cells for task " + std::string(to_string(task)));
  return points;
}

std::vector<ChartPoint> seed_sweep_points(const std::vector<SweepResult>& results, double ci_level) {
  std::vector<ChartPoint> points;
  for (const auto& r : results) {
    if (r.scores.empty()) throw DataError("sweep point k=" + std::to_string(r.k) + " has no scores");
    ChartPoint p{std::to_string(r.k), r.series, 0.0, {}, {}};
    if (r.scores.size() == 1) {
      p.value = r.scores.front() * 100.0;
    } else {
      const auto agg = aggregate_seeds(r.scores, ci_level);
      p.value = agg.mean * 100.0;
      p.ci_low = agg.ci_low * 100.0;
      p.ci_high = agg.ci_high * 100.0;
    }
    points.push_back(std::move(p));
  }
  return points;
}

std::string chart_csv(const std::vector<ChartPoint>& points) {
  std::string out = "group,series,value,ci_low,ci_high\n";
  for (const auto& p : points) {
    out += csv_field(p.group) + "," + csv_field(p.series) + "," + full(p.value) + "," +
           (p.ci_low ? full(*p.ci_low) : "") + "," + (p.ci_high ? full(*p.ci_high) : "") + "\n";
  }
  return out;
}

std::string chart_svg(const std::vector<ChartPoint>& points, ChartKind kind) {
  std::vector<std::string> groups, series;
  for (const auto& p : points) {
    if (std::find(groups.begin(), groups.end(), p.group) == groups.end()) groups.push_back(p.group);
    if (std::find(series.begin(), series.end(), p.series) == series.end()) series.push_back(p.series);
  }
  double lo = 0.0, hi = 0.0;
  for (const auto& p : points) {
    lo = std::min({lo, p.value, p.ci_low.value_or(p.value)});
    hi = std::max({hi, p.value, p.ci_high.value_or(p.value)});
  }
  if (hi == lo) hi = lo + 1.0;
  constexpr double kWidth = 800, kHeight = 400, kLeft = 50, kBottom = 40, kTop = 20;
  const double plot_h = kHeight - kBottom - kTop;
  const double group_w = (kWidth - kLeft - 150) / static_cast<double>(std::max<std::size_t>(groups.size(), 1));
  auto y_of = [&](double v) { return kTop + (hi - v) / (hi - lo) * plot_h; };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  static constexpr const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                             "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
  auto color = [&](std::size_t s) { return std::string(kPalette[s % 8]); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"400\" viewBox=\"0 0 800 400\">\n";
  svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(y_of(0)) + "\" x2=\"" + num(kWidth - 150) + "\" y2=\"" +
         num(y_of(0)) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"5\" y=\"" + num(kTop + 10) + "\" font-size=\"10\">" + num(hi) + "</text>\n";
  svg += "<text x=\"5\" y=\"" + num(kTop + plot_h) + "\" font-size=\"10\">" + num(lo) + "</text>\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    svg += "<text x=\"" + num(kLeft + (g + 0.5) * group_w) + "\" y=\"" + num(kHeight - 15) +
           "\" font-size=\"10\" text-anchor=\"middle\">" + xml_escape(groups[g]) + "</text>\n";
  }
  auto index_of = [](const std::vector<std::string>& v, const std::string& x) {
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
  };
  if (kind == ChartKind::kDiffBars) {
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
    for (const auto& p : points) {
      const auto g = index_of(groups, p.group), s = index_of(series, p.series);
      const double x = kLeft + g * group_w + group_w * 0.1 + s * bar_w;
      const double y0 = y_of(std::max(p.value, 0.0)), y1 = y_of(std::min(p.value, 0.0));
      svg += "<rect x=\"" + num(x) + "\" y=\"" + num(y0) + "\" width=\"" + num(bar_w) + "\" height=\"" +
             num(y1 - y0) + "\" fill=\"" + color(s) + "\"/>\n";
    }
  } else {
    for (std::size_t s = 0; s < series.size(); ++s) {
      std::string path;
      for (const auto& p : points) {
        if (p.series != series[s]) continue;
        const double x = kLeft + (index_of(groups, p.group) + 0.5) * group_w;
        path += (path.empty() ? "" : " ") + num(x) + "," + num(y_of(p.value));
        if (p.ci_low && p.ci_high) {
          svg += "<line x1=\"" + num(x) + "\" y1=\"" + num(y_of(*p.ci_low)) + "\" x2=\"" + num(x) + "\" y2=\"" +
                 num(y_of(*p.ci_high)) + "\" stroke=\"" + color(s) + "\" stroke-opacity=\"0.5\"/>\n";
        }
      }
      svg += "<polyline fill=\"none\" stroke=\"" + color(s) + "\" points=\"" + path + "\"/>\n";
    }
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = kTop + 14.0 * s;
    svg += "<rect x=\"" + num(kWidth - 140) + "\" y=\"" + num(y) + "\" width=\"10\" height=\"10\" fill=\"" + color(s) +
           "\"/>\n";
    svg += "<text x=\"" + num(kWidth - 125) + "\" y=\"" + num(y + 9) + "\" font-size=\"10\">" +
           xml_escape(series[s]) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

ChartFiles emit_chart_data(const std::vector<ChartPoint>& points, ChartKind kind, const std::filesystem::path& out) {
  if (points.empty()) throw DataError("no chart data to write");
  ChartFiles files{out, out};
  files.csv += ".csv";
  files.svg += ".svg";
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_file_atomic(files.csv, chart_csv(points));
  write_file_atomic(files.svg, chart_svg(points, kind));
  return files;
}

}  // namespace synthgen
