#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "synthgen/backend.hpp"
#include "synthgen/corpus.hpp"
#include "synthgen/metrics.hpp"
#include "synthgen/strategies.hpp"

namespace synthgen {

/// Exit codes of the synthgen executable.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

struct ModelEntry {
  std::string name;
  std::string kind = "http";  // http or sim
  BackendConfig backend;
  std::optional<std::filesystem::path> sim_script;
};

struct PipelineConfig {
  std::vector<Task> tasks{Task::kIntent};
  std::vector<std::string> languages;
  std::vector<ModelEntry> models;
  std::vector<StrategyKind> strategies;
  std::string judge_model;    // model name; empty = generator
  std::string summary_model;  // model name; empty = generator
  std::vector<std::uint64_t> seeds{0};
  /// per_label, demos_k and the remaining generation knobs. kind and seed
  /// are set per cell.
  StrategyConfig generation;
  /// Gold file pattern with {task} and {lang} placeholders.
  std::string gold_pattern;
  std::filesystem::path run_root = "runs";
  std::optional<std::filesystem::path> templates;
  MetricConfig metrics;

  const ModelEntry* model(std::string_view name) const;
  std::filesystem::path gold_path(Task task, std::string_view language) const;
};

/// Replaces ${NAME} with the environment variable NAME in every string.
/// Unset variables are reported as violations.
nlohmann::json interpolate_env(const nlohmann::json& j, std::vector<std::string>& violations,
                               const std::string& where = "");

/// Parses a config document, collecting every violation instead of stopping
/// at the first.
PipelineConfig parse_pipeline_config(const nlohmann::json& j, std::vector<std::string>& violations);
PipelineConfig load_pipeline_config(const std::filesystem::path& path, std::vector<std::string>& violations);

/// Path and value checks. Gold files are checked for every task and
/// language, plus English when a strategy needs English gold.
std::vector<std::string> validate_pipeline_config(const PipelineConfig& cfg, bool allow_any_language);

/// Expands "10,20,...,100" and plain comma lists.
std::vector<std::size_t> parse_count_list(std::string_view text);

int run_subcommand(int argc, const char* const* argv);
int run_subcommand(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace synthgen
