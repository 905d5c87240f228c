#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "synthgen/error.hpp"
#include "synthgen/metrics.hpp"

using namespace synthgen;

namespace {

std::vector<double> hashed_vector(const std::string& text) {
  Rng rng(fnv1a64(text));
  return oracle::random_vector(rng, 8);
}

Dataset tiny(const std::vector<std::pair<std::string, std::string>>& rows) {
  Dataset ds;
  for (const auto& [text, label] : rows) {
    if (!ds.has_label(label)) ds.labels.push_back({label, std::nullopt});
    ds.examples.push_back({"", text, label});
  }
  return ds;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("tokenize casefolds whitespace tokens") {
    CHECK(tokenize("Hello  WORLD\tStraße") == std::vector<std::string>{"hello", "world", "strasse"});
    CHECK(tokenize("   ").empty());
  }

  TEST_CASE("tf-idf similarity matches the reference implementation") {
    Rng rng(1);
    for (int trial = 0; trial < 150; ++trial) {
      const auto labels = testutil::label_names(1 + rng.index(4));
      const auto gen = oracle::random_dataset(rng, labels, 6, 5 + rng.index(30));
      const auto gold = oracle::random_dataset(rng, labels, 6, 5 + rng.index(30));
      CHECK(tfidf_cosine_to_gold(gen, gold) == doctest::Approx(oracle::tfidf_similarity(gen, gold)).epsilon(1e-9));
    }
  }

  TEST_CASE("tf-idf similarity hand case") {
    // One label, one document each side, identical text: similarity 1.
    CHECK(tfidf_cosine_to_gold(tiny({{"a b", "x"}}), tiny({{"A b", "x"}})) == doctest::Approx(1.0));
    // Disjoint vocabularies: similarity 0.
    CHECK(tfidf_cosine_to_gold(tiny({{"a b", "x"}}), tiny({{"c d", "x"}})) == 0.0);
  }

  TEST_CASE("tf-idf label set mismatch and empty buckets are errors") {
    CHECK_THROWS_AS(tfidf_cosine_to_gold(tiny({{"a", "x"}}), tiny({{"a", "y"}})), DataError);
    auto gen = tiny({{"a", "x"}});
    gen.labels.push_back({"y", std::nullopt});
    auto gold = tiny({{"a", "x"}, {"b", "y"}});
    CHECK_THROWS_AS(tfidf_cosine_to_gold(gen, gold), DataError);
  }

  TEST_CASE("property: tf-idf similarity lies in [0, 1] and is symmetric in the sides") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      const auto labels = testutil::label_names(1 + rng.index(3));
      const auto a = oracle::random_dataset(rng, labels, 5, 20);
      const auto b = oracle::random_dataset(rng, labels, 5, 20);
      const auto ab = tfidf_cosine_to_gold(a, b);
      CHECK(ab >= 0.0);
      CHECK(ab <= 1.0);
      CHECK(ab == doctest::Approx(tfidf_cosine_to_gold(b, a)).epsilon(1e-12));
    }
  }

  TEST_CASE("embedding similarity matches the reference and respects batching") {
    Rng rng(3);
    for (int trial = 0; trial < 60; ++trial) {
      const auto labels = testutil::label_names(1 + rng.index(3));
      const auto gen = oracle::random_dataset(rng, labels, 6, 40);
      const auto gold = oracle::random_dataset(rng, labels, 6, 40);
      testutil::FixedBackend backend;
      backend.vector_for = hashed_vector;
      MetricConfig cfg;
      cfg.embed_batch = 1 + rng.index(7);
      const auto got = embedding_cosine_to_gold(gen, gold, backend, cfg);
      CHECK(got == doctest::Approx(oracle::embedding_similarity(gen, gold, hashed_vector)).epsilon(1e-9));
    }
  }

  TEST_CASE("embedding similarity within generated pairs") {
    const auto gen = tiny({{"a", "x"}, {"b", "x"}, {"c", "x"}});
    const auto gold = tiny({{"z", "x"}});
    testutil::FixedBackend backend;
    backend.vector_for = hashed_vector;
    MetricConfig cfg;
    cfg.embed_within_generated = true;
    const double expected = (oracle::cosine(hashed_vector("a"), hashed_vector("b")) +
                             oracle::cosine(hashed_vector("a"), hashed_vector("c")) +
                             oracle::cosine(hashed_vector("b"), hashed_vector("c"))) /
                            3.0;
    CHECK(embedding_cosine_to_gold(gen, gold, backend, cfg) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("n-gram diversity hand cases") {
    const std::vector<std::string> two = {"the cat sat", "the cat ran"};
    // 1-grams 4/6, 2-grams 3/4, 3-grams 2/2, 4-grams none.
    CHECK(ngram_diversity(two, 4) == doctest::Approx(2.0 / 3.0 + 0.75 + 1.0).epsilon(1e-12));
    const std::vector<std::string> distinct = {"a b c d e"};
    CHECK(ngram_diversity(distinct, 4) == 4.0);
    const std::vector<std::string> repeated = {"x x x x"};
    CHECK(ngram_diversity(repeated, 2) == doctest::Approx(0.25 + 1.0 / 3.0));
    const std::vector<std::string> across = {"a b", "c d"};
    // No bigram spans documents: 2 of them, both unique.
    CHECK(ngram_diversity(across, 2) == 2.0);
  }

  TEST_CASE("n-gram diversity matches the reference") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<std::string> corpus;
      const auto n = 1 + rng.index(10);
      for (std::size_t i = 0; i < n; ++i) corpus.push_back(oracle::random_sentence(rng, 6, 10));
      const auto max_n = 1 + rng.index(5);
      CHECK(ngram_diversity(corpus, max_n) == doctest::Approx(oracle::ngram_diversity(corpus, max_n)).epsilon(1e-9));
    }
  }

  TEST_CASE("property: n-gram diversity is bounded by ngram_max and is order invariant") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::string> corpus(1 + rng.index(8));
      for (auto& doc : corpus) doc = oracle::random_sentence(rng, 4, 6);
      const auto d = ngram_diversity(corpus, 4);
      CHECK(d > 0.0);
      CHECK(d <= 4.0);
      auto reversed = corpus;
      std::reverse(reversed.begin(), reversed.end());
      CHECK(ngram_diversity(reversed, 4) == doctest::Approx(d).epsilon(1e-15));
    }
    const std::vector<std::string> empty;
    CHECK_THROWS_AS(ngram_diversity(empty, 4), DataError);
    const std::vector<std::string> blank = {" "};
    CHECK_THROWS_AS(ngram_diversity(blank, 4), DataError);
  }

  TEST_CASE("macro F1 matches the reference, including unknown predictions") {
    Rng rng(6);
    for (int trial = 0; trial < 300; ++trial) {
      const auto labels = testutil::label_names(1 + rng.index(6));
      std::vector<std::string> gold, pred;
      const auto n = 1 + rng.index(60);
      for (std::size_t i = 0; i < n; ++i) {
        gold.push_back(labels[rng.index(labels.size())]);
        pred.push_back(rng.bernoulli(0.05) ? "unknown" : labels[rng.index(labels.size())]);
        if (rng.bernoulli(0.4)) pred.back() = gold.back();
      }
      CHECK(macro_f1(pred, gold, labels).value == doctest::Approx(oracle::macro_f1(pred, gold, labels)).epsilon(1e-12));
    }
  }

  TEST_CASE("macro F1 edge cases") {
    const std::vector<std::string> labels = {"a", "b", "c"};
    const std::vector<std::string> gold = {"a", "a", "b"};
    CHECK(macro_f1(gold, gold, labels).value == doctest::Approx(2.0 / 3.0));
    const auto r = macro_f1(gold, gold, labels);
    CHECK(r.warnings.size() == 1);
    CHECK(r.per_label == std::vector<double>{1.0, 1.0, 0.0});
    const std::vector<std::string> short_pred = {"a"};
    CHECK_THROWS_AS(macro_f1(short_pred, gold, labels), DataError);
    const std::vector<std::string> bad_gold = {"z", "a", "a"};
    CHECK_THROWS_AS(macro_f1(gold, bad_gold, labels), DataError);
  }

  TEST_CASE("pearson matches the reference and is bounded") {
    Rng rng(7);
    for (int trial = 0; trial < 300; ++trial) {
      const auto n = 2 + rng.index(40);
      std::vector<double> x(n), y(n);
      const double slope = rng.uniform() * 2 - 1;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.uniform();
        y[i] = slope * x[i] + 0.3 * rng.uniform();
      }
      const auto r = pearson(x, y);
      CHECK(r == doctest::Approx(oracle::pearson(x, y)).epsilon(1e-9));
      CHECK(std::abs(r) <= 1.0);
    }
    const std::vector<double> a = {1, 2, 3}, b = {2, 4, 6}, c = {3, 2, 1}, flat = {1, 1, 1};
    CHECK(pearson(a, b) == 1.0);
    CHECK(pearson(a, c) == -1.0);
    CHECK_THROWS_AS(pearson(a, flat), DataError);
    CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), DataError);
  }

  TEST_CASE("seed aggregation matches pinned t quantiles") {
    Rng rng(8);
    for (int trial = 0; trial < 300; ++trial) {
      const auto n = 2 + rng.index(60);
      std::vector<double> scores(n);
      for (auto& s : scores) s = 0.6 + 0.3 * rng.uniform();
      const int level = static_cast<int>(rng.index(5));
      const auto got = aggregate_seeds(scores, kTLevels[level]);
      const auto want = oracle::t_interval(scores, level);
      CHECK(got.mean == doctest::Approx(want.mean).epsilon(1e-12));
      CHECK(std::abs(got.ci_low - want.low) < 1e-6);
      CHECK(std::abs(got.ci_high - want.high) < 1e-6);
    }
  }

  TEST_CASE("seed aggregation pinned fixture") {
    const std::vector<double> scores = {0.812, 0.797, 0.825, 0.803, 0.819, 0.788, 0.831, 0.809, 0.815, 0.799};
    const auto agg = aggregate_seeds(scores);
    CHECK(std::abs(agg.mean - 0.8097999999999999) < 1e-12);
    CHECK(std::abs(agg.ci_low - 0.800263100256191) < 1e-9);
    CHECK(std::abs(agg.ci_high - 0.8193368997438087) < 1e-9);
    CHECK_THROWS_AS(aggregate_seeds(std::vector<double>{0.5}), DataError);
    CHECK_THROWS_AS(aggregate_seeds(scores, 1.0), ConfigError);
  }

  TEST_CASE("property: interval widens with confidence level and contains the mean") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> scores(2 + rng.index(10));
      for (auto& s : scores) s = rng.uniform();
      double prev = 0;
      for (double level : kTLevels) {
        const auto a = aggregate_seeds(scores, level);
        CHECK(a.ci_low <= a.mean);
        CHECK(a.mean <= a.ci_high);
        CHECK(a.ci_high - a.ci_low >= prev);
        prev = a.ci_high - a.ci_low;
      }
    }
  }

  TEST_CASE("metric report json uses six decimals and round-trips") {
    MetricReport r;
    r.run_id = "abc";
    r.set_seed_scores({0.8, 0.9});
    r.tfidf_sim = 0.123456789;
    r.ngram_div = 2.0833333333;
    r.metric_config = MetricConfig{}.to_json();
    const auto text = r.to_json_string();
    CHECK(text.find("\"tfidf_sim\":0.123457") != std::string::npos);
    CHECK(text.find("\"embed_sim\":null") != std::string::npos);
    CHECK(text.find("\"f1_mean\":0.850000") != std::string::npos);
    const auto back = MetricReport::from_json(nlohmann::json::parse(text));
    CHECK(back.run_id == "abc");
    CHECK(back.per_seed_f1 == std::vector<double>{0.8, 0.9});
    CHECK(*back.ngram_div == 2.083333);
    CHECK_FALSE(back.embed_sim.has_value());
    CHECK(back.to_json_string() == text);
    MetricReport single;
    single.set_seed_scores({0.7});
    CHECK(single.f1_ci_low == 0.7);
    CHECK(single.f1_ci_high == 0.7);
  }

  TEST_CASE("metric config validation") {
    CHECK_THROWS_AS(MetricConfig::from_json({{"ngram_max", 0}}), ConfigError);
    CHECK_THROWS_AS(MetricConfig::from_json({{"ci_level", 1.5}}), ConfigError);
    const auto c = MetricConfig::from_json({{"embed_batch", 8}});
    CHECK(c.embed_batch == 8);
    CHECK(MetricConfig::from_json(c.to_json()).to_json() == c.to_json());
  }
}
