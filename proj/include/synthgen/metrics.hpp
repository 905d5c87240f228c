#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "synthgen/backend.hpp"
#include "synthgen/corpus.hpp"

namespace synthgen {

/// TF-IDF weighting is fixed: raw term counts, idf = ln((1 + N) / (1 + df)) + 1,
/// L2-normalized document vectors.
struct MetricConfig {
  std::size_t ngram_max = 4;
  std::size_t embed_batch = 64;
  double ci_level = 0.95;
  /// Pair generated samples with each other instead of with gold.
  bool embed_within_generated = false;

  void validate() const;
  nlohmann::json to_json() const;
  static MetricConfig from_json(const nlohmann::json& j);
};

/// Lowercased (casefolded) whitespace tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Mean same-label cosine over (generated, gold) pairs, then the unweighted
/// mean over labels. Vocabulary and idf are fitted on both corpora together.
double tfidf_cosine_to_gold(const Dataset& generated, const Dataset& gold, const MetricConfig& cfg = {});

double embedding_cosine_to_gold(const Dataset& generated, const Dataset& gold, Backend& backend,
                                const MetricConfig& cfg = {});

/// Sum over n = 1..ngram_max of unique / total n-grams. N-grams never span
/// document boundaries.
double ngram_diversity(std::span<const std::string> corpus, std::size_t ngram_max = 4);

struct MacroF1 {
  double value = 0.0;
  std::vector<double> per_label;      // label-set order
  std::vector<std::string> warnings;  // labels absent from both sides
};

MacroF1 macro_f1(std::span<const std::string> predictions, std::span<const std::string> gold,
                 std::span<const std::string> labels);

double pearson(std::span<const double> xs, std::span<const double> ys);

struct SeedAggregate {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// mean +- t(n-1, (1 + ci_level) / 2) * s / sqrt(n), sample standard deviation.
SeedAggregate aggregate_seeds(std::span<const double> scores, double ci_level = 0.95);

struct MetricReport {
  std::string run_id;
  double f1_mean = 0.0;
  double f1_ci_low = 0.0;
  double f1_ci_high = 0.0;
  std::optional<double> tfidf_sim;
  std::optional<double> embed_sim;
  std::optional<double> ngram_div;
  std::optional<double> rejection_rate;
  std::vector<double> per_seed_f1;
  nlohmann::json metric_config = nlohmann::json::object();

  /// Fills mean and CI from per_seed_f1. A single seed gives a zero-width interval.
  void set_seed_scores(std::vector<double> scores, double ci_level = 0.95);
  /// Reals are written with 6 decimal places.
  std::string to_json_string() const;
  static MetricReport from_json(const nlohmann::json& j);
};

}  // namespace synthgen
