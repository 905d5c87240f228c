#include "synthgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

#include "synthgen/error.hpp"
#include "synthgen/unicode.hpp"

namespace synthgen {
namespace {

using SparseVector = std::vector<std::pair<std::size_t, double>>;

struct LabelBuckets {
  std::vector<std::string> labels;
  std::map<std::string, std::vector<std::string>> generated;
  std::map<std::string, std::vector<std::string>> gold;
};

LabelBuckets bucket(const Dataset& generated, const Dataset& gold) {
  LabelBuckets b;
  b.labels = gold.label_names();
  const auto gen_labels = generated.label_names();
  if (std::set<std::string>(gen_labels.begin(), gen_labels.end()) !=
      std::set<std::string>(b.labels.begin(), b.labels.end())) {
    throw DataError("generated and gold datasets have different label sets");
  }
  for (const auto& e : generated.examples) b.generated[e.label].push_back(e.text);
  for (const auto& e : gold.examples) b.gold[e.label].push_back(e.text);
  for (const auto& label : b.labels) {
    if (b.generated[label].empty()) throw DataError("label '" + label + "' has no generated examples");
    if (b.gold[label].empty()) throw DataError("label '" + label + "' has no gold examples");
  }
  return b;
}

double sparse_dot(const SparseVector& a, const SparseVector& b) {
  double sum = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first < b[j].first) {
      ++i;
    } else if (b[j].first < a[i].first) {
      ++j;
    } else {
      sum += a[i++].second * b[j++].second;
    }
  }
  return sum;
}

double dense_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

void l2_normalize(std::vector<double>& v) {
  const double norm = std::sqrt(dense_dot(v, v));
  if (norm > 0.0) {
    for (auto& x : v) x /= norm;
  }
}

double clamp_unit(double x) { return std::clamp(x, -1.0, 1.0); }

// Mean over labels of the mean pairwise score, cross or within the generated side.
template <typename Vec, typename Dot>
double paired_mean(const std::vector<std::string>& labels, const std::map<std::string, std::vector<Vec>>& gen,
                   const std::map<std::string, std::vector<Vec>>& gold, bool within, Dot dot) {
  double total = 0.0;
  for (const auto& label : labels) {
    const auto& g = gen.at(label);
    double sum = 0.0;
    std::size_t pairs = 0;
    if (within) {
      if (g.size() < 2) throw DataError("label '" + label + "' needs at least 2 generated examples for within pairs");
      for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j = i + 1; j < g.size(); ++j, ++pairs) sum += dot(g[i], g[j]);
      }
    } else {
      for (const auto& a : g) {
        for (const auto& b : gold.at(label)) {
          sum += dot(a, b);
          ++pairs;
        }
      }
    }
    total += sum / static_cast<double>(pairs);
  }
  return clamp_unit(total / static_cast<double>(labels.size()));
}

std::string fixed6(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  std::string s(buf);
  if (s == "-0.000000") s.erase(0, 1);
  return s;
}

}  // namespace

void MetricConfig::validate() const {
  if (ngram_max < 1) throw ConfigError("ngram_max must be >= 1");
  if (embed_batch < 1) throw ConfigError("embed_batch must be >= 1");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie in (0, 1)");
}

nlohmann::json MetricConfig::to_json() const {
  return {{"ngram_max", ngram_max},
          {"embed_batch", embed_batch},
          {"ci_level", ci_level},
          {"embed_within_generated", embed_within_generated},
          {"tfidf", {{"tf", "raw"}, {"idf", "smooth"}, {"norm", "l2"}}}};
}

MetricConfig MetricConfig::from_json(const nlohmann::json& j) {
  MetricConfig c;
  try {
    c.ngram_max = j.value("ngram_max", c.ngram_max);
    c.embed_batch = j.value("embed_batch", c.embed_batch);
    c.ci_level = j.value("ci_level", c.ci_level);
    c.embed_within_generated = j.value("embed_within_generated", c.embed_within_generated);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad metric config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto token : unicode::split_whitespace(text)) out.push_back(unicode::casefold(token));
  return out;
}

double tfidf_cosine_to_gold(const Dataset& generated, const Dataset& gold, const MetricConfig& cfg) {
  const auto b = bucket(generated, gold);

  std::unordered_map<std::string, std::size_t> vocab;
  std::vector<std::size_t> df;
  std::vector<std::vector<std::size_t>> doc_terms;
  auto add_doc = [&](const std::string& text) {
    std::vector<std::size_t> ids;
    for (auto& tok : tokenize(text)) {
      auto [it, fresh] = vocab.try_emplace(std::move(tok), vocab.size());
      if (fresh) df.push_back(0);
      ids.push_back(it->second);
    }
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i == 0 || ids[i] != ids[i - 1]) ++df[ids[i]];
    }
    doc_terms.push_back(std::move(ids));
    return doc_terms.size() - 1;
  };

  std::map<std::string, std::vector<std::size_t>> gen_docs, gold_docs;
  for (const auto& label : b.labels) {
    for (const auto& t : b.generated.at(label)) gen_docs[label].push_back(add_doc(t));
    for (const auto& t : b.gold.at(label)) gold_docs[label].push_back(add_doc(t));
  }

  const double n_docs = static_cast<double>(doc_terms.size());
  std::vector<double> idf(df.size());
  for (std::size_t t = 0; t < df.size(); ++t) idf[t] = std::log((1.0 + n_docs) / (1.0 + df[t])) + 1.0;

  std::vector<SparseVector> vectors(doc_terms.size());
  for (std::size_t d = 0; d < doc_terms.size(); ++d) {
    const auto& ids = doc_terms[d];
    SparseVector v;
    for (std::size_t i = 0; i < ids.size();) {
      std::size_t j = i;
      while (j < ids.size() && ids[j] == ids[i]) ++j;
      v.emplace_back(ids[i], static_cast<double>(j - i) * idf[ids[i]]);
      i = j;
    }
    double norm = 0.0;
    for (const auto& [_, w] : v) norm += w * w;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (auto& [_, w] : v) w /= norm;
    }
    vectors[d] = std::move(v);
  }

  auto gather = [&](const std::map<std::string, std::vector<std::size_t>>& docs) {
    std::map<std::string, std::vector<SparseVector>> out;
    for (const auto& [label, ids] : docs) {
      for (auto id : ids) out[label].push_back(vectors[id]);
    }
    return out;
  };
  (void)cfg;
  return paired_mean(b.labels, gather(gen_docs), gather(gold_docs), false, sparse_dot);
}

double embedding_cosine_to_gold(const Dataset& generated, const Dataset& gold, Backend& backend,
                                const MetricConfig& cfg) {
  cfg.validate();
  const auto b = bucket(generated, gold);
  std::vector<std::string> texts;
  for (const auto& label : b.labels) {
    texts.insert(texts.end(), b.generated.at(label).begin(), b.generated.at(label).end());
    if (!cfg.embed_within_generated) texts.insert(texts.end(), b.gold.at(label).begin(), b.gold.at(label).end());
  }
  std::vector<std::vector<double>> vectors;
  vectors.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += cfg.embed_batch) {
    const auto n = std::min(cfg.embed_batch, texts.size() - begin);
    auto batch = backend.embed(std::span<const std::string>(texts).subspan(begin, n));
    if (batch.size() != n) throw BackendError("embedding count does not match input count", 0);
    for (auto& v : batch) {
      if (!vectors.empty() && v.size() != vectors.front().size()) {
        throw BackendError("embedding dimension mismatch", 0);
      }
      l2_normalize(v);
      vectors.push_back(std::move(v));
    }
  }
  std::map<std::string, std::vector<std::vector<double>>> gen_vecs, gold_vecs;
  std::size_t next = 0;
  for (const auto& label : b.labels) {
    for (std::size_t i = 0; i < b.generated.at(label).size(); ++i) gen_vecs[label].push_back(vectors[next++]);
    if (!cfg.embed_within_generated) {
      for (std::size_t i = 0; i < b.gold.at(label).size(); ++i) gold_vecs[label].push_back(vectors[next++]);
    }
  }
  return paired_mean(b.labels, gen_vecs, gold_vecs, cfg.embed_within_generated, dense_dot);
}

double ngram_diversity(std::span<const std::string> corpus, std::size_t ngram_max) {
  if (ngram_max < 1) throw ConfigError("ngram_max must be >= 1");
  if (corpus.empty()) throw DataError("n-gram diversity needs a non-empty corpus");
  std::vector<std::vector<std::string>> docs;
  docs.reserve(corpus.size());
  bool any = false;
  for (const auto& text : corpus) {
    docs.push_back(tokenize(text));
    any = any || !docs.back().empty();
  }
  if (!any) throw DataError("n-gram diversity needs at least one document with a token");

  double score = 0.0;
  for (std::size_t n = 1; n <= ngram_max; ++n) {
    std::set<std::vector<std::string_view>> unique;
    std::size_t total = 0;
    for (const auto& doc : docs) {
      for (std::size_t i = 0; i + n <= doc.size(); ++i) {
        unique.emplace(doc.begin() + i, doc.begin() + i + n);
        ++total;
      }
    }
    if (total > 0) score += static_cast<double>(unique.size()) / static_cast<double>(total);
  }
  return score;
}

MacroF1 macro_f1(std::span<const std::string> predictions, std::span<const std::string> gold,
                 std::span<const std::string> labels) {
  if (predictions.size() != gold.size()) {
    throw DataError("macro F1 needs equal lengths (" + std::to_string(predictions.size()) + " predictions, " +
                    std::to_string(gold.size()) + " gold)");
  }
  if (labels.empty()) throw DataError("macro F1 needs a non-empty label set");
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index.emplace(labels[i], i);
  std::vector<std::size_t> tp(labels.size()), fp(labels.size()), fn(labels.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = index.find(gold[i]);
    if (g == index.end()) throw DataError("gold label '" + gold[i] + "' is not in the label set");
    const auto p = index.find(predictions[i]);
    if (p != index.end() && p->second == g->second) {
      ++tp[g->second];
    } else {
      ++fn[g->second];
      if (p != index.end()) ++fp[p->second];
    }
  }
  MacroF1 out;
  double sum = 0.0;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    double f1 = 0.0;
    if (tp[l] + fp[l] + fn[l] == 0) {
      out.warnings.push_back("label '" + labels[l] + "' absent from predictions and gold; F1 counted as 0");
    } else {
      f1 = 2.0 * tp[l] / static_cast<double>(2 * tp[l] + fp[l] + fn[l]);
    }
    out.per_label.push_back(f1);
    sum += f1;
  }
  out.value = sum / static_cast<double>(labels.size());
  return out;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw DataError("pearson needs equal lengths");
  if (xs.size() < 2) throw DataError("pearson needs at least 2 points");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("pearson is undefined for zero variance");
  return clamp_unit(sxy / std::sqrt(sxx * syy));
}

SeedAggregate aggregate_seeds(std::span<const double> scores, double ci_level) {
  if (scores.size() < 2) throw DataError("seed aggregation needs at least 2 scores");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie in (0, 1)");
  const double n = static_cast<double>(scores.size());
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  const double t = boost::math::quantile(dist, (1.0 + ci_level) / 2.0);
  const double half = t * sd / std::sqrt(n);
  return {mean, mean - half, mean + half};
}

void MetricReport::set_seed_scores(std::vector<double> scores, double ci_level) {
  if (scores.empty()) throw DataError("no seed scores");
  per_seed_f1 = std::move(scores);
  if (per_seed_f1.size() == 1) {
    f1_mean = f1_ci_low = f1_ci_high = per_seed_f1.front();
    return;
  }
  const auto agg = aggregate_seeds(per_seed_f1, ci_level);
  f1_mean = agg.mean;
  f1_ci_low = agg.ci_low;
  f1_ci_high = agg.ci_high;
}

std::string MetricReport::to_json_string() const {
  auto opt = [](const std::optional<double>& v) { return v ? fixed6(*v) : std::string("null"); };
  std::string seeds = "[";
  for (std::size_t i = 0; i < per_seed_f1.size(); ++i) seeds += (i ? "," : "") + fixed6(per_seed_f1[i]);
  seeds += "]";
  return "{\"run_id\":" + nlohmann::json(run_id).dump() + ",\"f1_mean\":" + fixed6(f1_mean) +
         ",\"f1_ci_low\":" + fixed6(f1_ci_low) + ",\"f1_ci_high\":" + fixed6(f1_ci_high) +
         ",\"tfidf_sim\":" + opt(tfidf_sim) + ",\"embed_sim\":" + opt(embed_sim) + ",\"ngram_div\":" +
         opt(ngram_div) + ",\"rejection_rate\":" + opt(rejection_rate) + ",\"per_seed_f1\":" + seeds +
         ",\"metric_config\":" + metric_config.dump() + "}";
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  try {
    r.run_id = j.value("run_id", std::string());
    r.f1_mean = j.at("f1_mean").get<double>();
    r.f1_ci_low = j.value("f1_ci_low", r.f1_mean);
    r.f1_ci_high = j.value("f1_ci_high", r.f1_mean);
    r.tfidf_sim = opt("tfidf_sim");
    r.embed_sim = opt("embed_sim");
    r.ngram_div = opt("ngram_div");
    r.rejection_rate = opt("rejection_rate");
    r.per_seed_f1 = j.value("per_seed_f1", std::vector<double>{});
    r.metric_config = j.value("metric_config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("bad metric report: ") + ex.what());
  }
  return r;
}

}  // namespace synthgen
