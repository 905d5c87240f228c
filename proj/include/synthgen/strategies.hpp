#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "synthgen/backend.hpp"
#include "synthgen/corpus.hpp"
#include "synthgen/prompting.hpp"

namespace synthgen {

/// The seven generation strategy combinations.
enum class StrategyKind {
  kSL,
  kEnDemosSL,
  kEnDemosRev,
  kTargetDemos,
  kTargetDemosSL,
  kTargetDemosRev,
  kTargetDemosSLRev,
};

enum class DemoSource { kNone, kEnglish, kTarget };

struct StrategyTraits {
  bool summary_in_prompt = false;
  DemoSource demos = DemoSource::kNone;
  bool revision = false;

  /// Revision needs the label description even when the generation prompt
  /// does not include it.
  bool needs_summary() const { return summary_in_prompt || revision; }
};

std::span<const StrategyKind> all_strategies();
StrategyTraits traits(StrategyKind kind);
std::string_view cli_name(StrategyKind kind);      // e.g. "target-demos-sl-rev"
std::string_view display_name(StrategyKind kind);  // e.g. "TargetDemos + SL + Rev."
StrategyKind parse_strategy(std::string_view name);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kTargetDemosSLRev;
  std::size_t per_label = 100;
  std::size_t demos_k = 10;
  std::size_t max_generation_rounds = 100;
  std::size_t revision_batch = 10;
  std::size_t samples_per_call = 10;
  std::size_t summary_k = 10;
  /// Regenerate to replace rejected samples. When false every generated
  /// sample is judged once and rejects become shortfall.
  bool refill_rejected = true;
  FailMode judge_fail_mode = FailMode::kOpen;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static StrategyConfig from_json(const nlohmann::json& j);
};

struct RevisionVerdict {
  std::string sample_id;
  bool accepted = true;
  std::string reason;
  std::string judge_model;

  bool operator==(const RevisionVerdict&) const = default;
};

nlohmann::json to_json(const RevisionVerdict& v);
RevisionVerdict verdict_from_json(const nlohmann::json& j);

struct LabelCounts {
  std::size_t generated = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t duplicates_removed = 0;
  std::size_t rounds = 0;
  std::size_t judge_calls = 0;

  std::size_t judged() const { return accepted + rejected; }
  bool operator==(const LabelCounts&) const = default;
};

enum class RunStatus { kRunning, kComplete, kFailed, kPartial };
std::string_view to_string(RunStatus status);
RunStatus parse_run_status(std::string_view name);

struct GenerationRun {
  std::string run_id;
  Task task = Task::kIntent;
  std::string language;
  std::string model_id;
  StrategyConfig strategy;
  std::vector<LabelSpec> labels;          // summaries as used by the run
  std::vector<LabeledExample> samples;    // kept corpus, label order
  std::vector<LabeledExample> rejected;   // judged and rejected
  std::vector<RevisionVerdict> verdicts;  // label order, judge order
  std::map<std::string, LabelCounts> counts;
  std::map<std::string, std::size_t> shortfalls;
  nlohmann::json config_snapshot = nlohmann::json::object();
  RunStatus status = RunStatus::kRunning;

  /// Hash over kept samples, rejects, verdicts and counters. Equal hashes
  /// mean equal run content.
  std::string content_hash() const;
  /// Kept samples as a Dataset.
  Dataset corpus() const;
};

/// (task, label) -> summary store shared across languages and strategies.
class SummaryCache {
 public:
  virtual ~SummaryCache() = default;
  virtual std::optional<std::string> get(Task task, const std::string& label) const = 0;
  virtual void put(Task task, const std::string& label, const std::string& summary) = 0;
};

/// Collapses a completion into one trimmed paragraph. Empty if nothing usable.
std::string clean_summary(std::string_view completion);

LabelSpec summarize_label(std::string_view label_name, const Dataset& english_gold, Backend& backend,
                          std::size_t k = 10, SummaryCache* cache = nullptr,
                          const PromptTemplates& templates = PromptTemplates::defaults());

std::vector<RevisionVerdict> revise_batch(std::span<const LabeledExample> samples, const LabelSpec& label,
                                          Backend& judge, std::size_t batch, const RevisionTarget& target,
                                          FailMode mode = FailMode::kOpen,
                                          const PromptTemplates& templates = PromptTemplates::defaults());

/// Gold data a strategy draws demonstrations and summaries from.
struct GoldSources {
  const Dataset* target = nullptr;   // target-language gold
  const Dataset* english = nullptr;  // English gold
};

class RunInterrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunHooks {
  /// Called after every completed round with a consistent snapshot.
  std::function<void(const GenerationRun&)> checkpoint;
  /// Polled before each round; returning true stops the run with
  /// RunInterrupted after a final checkpoint.
  std::function<bool(const std::string& label, const LabelCounts&)> should_stop;
};

struct RunContext {
  Backend* generator = nullptr;
  Backend* judge = nullptr;       // defaults to generator
  Backend* summarizer = nullptr;  // defaults to generator
  SummaryCache* summaries = nullptr;
  PromptTemplates templates = PromptTemplates::defaults();
  RunHooks hooks;
  std::size_t jobs = 0;  // 0 = generator parallelism
  /// Backend settings recorded in the run's config snapshot.
  nlohmann::json backend_settings = nlohmann::json::object();
};

/// Deterministic id from everything that shapes run content.
std::string make_run_id(Task task, std::string_view language, std::string_view model_id,
                        const StrategyConfig& cfg, std::string_view templates_version);

/// Generates to quota for one label without revision: dedups and loops
/// until per_label unique samples or the round cap.
struct LabelGeneration {
  std::vector<LabeledExample> samples;
  LabelCounts counts;
  std::size_t shortfall = 0;
};

LabelGeneration generate_for_label(const LabelSpec& label, Task task, const std::string& language,
                                   const StrategyConfig& cfg, const GoldSources& gold, Backend& backend,
                                   const PromptTemplates& templates = PromptTemplates::defaults());

GenerationRun run_strategy(Task task, const std::string& language, const StrategyConfig& cfg,
                           const GoldSources& gold, RunContext& ctx, const GenerationRun* resume_from = nullptr);

struct RejectionStats {
  std::map<std::string, double> per_label;  // rounded to 4 decimals
  double total = 0.0;                       // rounded to 4 decimals
  std::size_t rejected = 0;
  std::size_t judged = 0;
};

RejectionStats rejection_stats(const GenerationRun& run);

}  // namespace synthgen
