#include <algorithm>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "synthgen/error.hpp"
#include "synthgen/sim.hpp"
#include "synthgen/strategies.hpp"
#include "synthgen/unicode.hpp"

using namespace synthgen;

namespace {

SimScript sim_script(double accept, double dup = 0.0, double off = 0.0, std::uint64_t seed = 0) {
  SimScript s;
  s.seed = seed;
  s.behaviors[{"*", "*"}] = SimBehavior{accept, {}, dup, off};
  return s;
}

struct Fixture {
  Dataset target = testutil::make_gold(Task::kTopic, "cy", testutil::label_names(3), 30);
  Dataset english = testutil::make_gold(Task::kTopic, "en", testutil::label_names(3), 30);
  GoldSources gold{&target, &english};
};

StrategyConfig small_config(StrategyKind kind, std::size_t per_label = 20) {
  StrategyConfig cfg;
  cfg.kind = kind;
  cfg.per_label = per_label;
  cfg.demos_k = 5;
  cfg.max_generation_rounds = 40;
  return cfg;
}

class MapCache final : public SummaryCache {
 public:
  std::map<std::string, std::string> entries;
  std::optional<std::string> get(Task task, const std::string& label) const override {
    auto it = entries.find(std::string(to_string(task)) + "/" + label);
    if (it == entries.end()) return std::nullopt;
    return it->second;
  }
  void put(Task task, const std::string& label, const std::string& summary) override {
    entries[std::string(to_string(task)) + "/" + label] = summary;
  }
};

}  // namespace

TEST_SUITE("strategies") {
  TEST_CASE("the seven strategies and their component flags") {
    REQUIRE(all_strategies().size() == 7);
    const std::vector<std::pair<std::string, StrategyTraits>> expected = {
        {"sl", {true, DemoSource::kNone, false}},
        {"en-demos-sl", {true, DemoSource::kEnglish, false}},
        {"en-demos-rev", {false, DemoSource::kEnglish, true}},
        {"target-demos", {false, DemoSource::kTarget, false}},
        {"target-demos-sl", {true, DemoSource::kTarget, false}},
        {"target-demos-rev", {false, DemoSource::kTarget, true}},
        {"target-demos-sl-rev", {true, DemoSource::kTarget, true}},
    };
    for (std::size_t i = 0; i < 7; ++i) {
      const auto kind = all_strategies()[i];
      CHECK(cli_name(kind) == expected[i].first);
      const auto t = traits(kind);
      CHECK(t.summary_in_prompt == expected[i].second.summary_in_prompt);
      CHECK(t.demos == expected[i].second.demos);
      CHECK(t.revision == expected[i].second.revision);
      CHECK(parse_strategy(cli_name(kind)) == kind);
      CHECK(parse_strategy(display_name(kind)) == kind);
    }
    CHECK(display_name(StrategyKind::kTargetDemosSLRev) == "TargetDemos + SL + Rev.");
    CHECK(display_name(StrategyKind::kSL) == "Summarized Label (SL)");
    CHECK_THROWS_AS(parse_strategy("zero-shot"), ConfigError);
  }

  TEST_CASE("strategy config json round trip and validation") {
    StrategyConfig cfg;
    cfg.kind = StrategyKind::kEnDemosRev;
    cfg.per_label = 7;
    cfg.refill_rejected = false;
    cfg.judge_fail_mode = FailMode::kClosed;
    cfg.seed = 99;
    const auto back = StrategyConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.kind == StrategyKind::kEnDemosRev);
    CHECK(back.judge_fail_mode == FailMode::kClosed);
    cfg.per_label = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(StrategyConfig::from_json({{"kind", "nope"}}), ConfigError);
  }

  TEST_CASE("run reaches quota for every strategy with a permissive sim") {
    Fixture f;
    SimBackend sim(sim_script(1.0), "sim");
    for (auto kind : all_strategies()) {
      RunContext ctx;
      ctx.generator = &sim;
      const auto run = run_strategy(Task::kTopic, "cy", small_config(kind), f.gold, ctx);
      CHECK(run.status == RunStatus::kComplete);
      CHECK(run.samples.size() == 60);
      CHECK(run.shortfalls.empty());
      for (const auto& [label, c] : run.counts) {
        CHECK(c.accepted == 20);
        CHECK(c.generated == c.accepted + c.rejected + c.duplicates_removed);
      }
      for (const auto& e : run.samples) {
        CHECK(e.source == Source::kGenerated);
        CHECK(e.language == "cy");
        CHECK(e.meta.at("strategy") == cli_name(kind));
        CHECK(e.meta.at("run_id") == run.run_id);
        CHECK(e.meta.at("model") == "sim");
      }
      const bool judged = traits(kind).revision;
      CHECK(run.verdicts.size() == (judged ? 60u : 0u));
    }
  }

  TEST_CASE("prompt composition follows the strategy") {
    Fixture f;
    f.target.labels[0].summary = "SUMMARY-MARKER zero";
    f.target.labels[1].summary = "SUMMARY-MARKER one";
    f.target.labels[2].summary = "SUMMARY-MARKER two";
    SimBackend sim(sim_script(1.0), "sim");
    for (auto kind : all_strategies()) {
      testutil::RecordingBackend rec(sim);
      RunContext ctx;
      ctx.generator = &rec;
      ctx.jobs = 1;
      run_strategy(Task::kTopic, "cy", small_config(kind, 10), f.gold, ctx);
      const auto t = traits(kind);
      std::size_t generation_calls = 0, revision_calls = 0;
      for (const auto& call : rec.calls()) {
        const auto marker = find_marker(call);
        REQUIRE(marker);
        const auto& user = call.at(1).content;
        if (marker->kind == PromptMarker::Kind::kRevision) {
          ++revision_calls;
          CHECK(user.find("SUMMARY-MARKER") != std::string::npos);
          continue;
        }
        ++generation_calls;
        CHECK((user.find("SUMMARY-MARKER") != std::string::npos) == t.summary_in_prompt);
        CHECK((user.find(" en\n") != std::string::npos) == (t.demos == DemoSource::kEnglish));
        CHECK((user.find(" cy\n") != std::string::npos) == (t.demos == DemoSource::kTarget));
      }
      CHECK(generation_calls >= 3);
      CHECK((revision_calls > 0) == t.revision);
    }
  }

  TEST_CASE("revision without refill judges exactly per_label samples per label") {
    Fixture f;
    SimBackend sim(sim_script(0.4, 0.0, 0.0, 11), "sim");
    auto cfg = small_config(StrategyKind::kTargetDemosSLRev, 20);
    cfg.refill_rejected = false;
    RunContext ctx;
    ctx.generator = &sim;
    const auto run = run_strategy(Task::kTopic, "cy", cfg, f.gold, ctx);
    const auto stats = rejection_stats(run);
    CHECK(stats.judged == 60);
    CHECK(stats.rejected == run.rejected.size());
    CHECK(run.samples.size() + run.rejected.size() == 60);
    for (const auto& [label, c] : run.counts) {
      CHECK(c.judged() == 20);
      CHECK(c.judge_calls <= c.rounds);
      if (c.accepted < 20) CHECK(run.shortfalls.at(label) == 20 - c.accepted);
    }
    for (const auto& e : run.rejected) CHECK_FALSE(e.meta.at("revision_reason").empty());
    CHECK(stats.total == doctest::Approx(static_cast<double>(stats.rejected) / 60.0).epsilon(1e-4));
  }

  TEST_CASE("revision with refill regenerates until quota") {
    Fixture f;
    SimBackend sim(sim_script(0.5, 0.0, 0.0, 4), "sim");
    auto cfg = small_config(StrategyKind::kTargetDemosRev, 15);
    RunContext ctx;
    ctx.generator = &sim;
    const auto run = run_strategy(Task::kTopic, "cy", cfg, f.gold, ctx);
    CHECK(run.samples.size() == 45);
    CHECK(run.rejected.size() > 0);
    for (const auto& [label, c] : run.counts) CHECK(c.judged() == c.accepted + c.rejected);
  }

  TEST_CASE("duplicates are removed case-insensitively and counted") {
    Fixture f;
    SimScript script = sim_script(1.0, 0.5, 0.0, 2);
    SimBackend sim(script, "sim");
    RunContext ctx;
    ctx.generator = &sim;
    const auto run = run_strategy(Task::kTopic, "cy", small_config(StrategyKind::kTargetDemos, 25), f.gold, ctx);
    std::set<std::string> keys;
    for (const auto& e : run.samples) CHECK(keys.insert(unicode::casefold(unicode::trim(e.text))).second);
    std::size_t dups = 0;
    for (const auto& [label, c] : run.counts) dups += c.duplicates_removed;
    CHECK(dups > 0);
  }

  TEST_CASE("round cap leaves a recorded shortfall") {
    Fixture f;
    SimScript script;
    script.behaviors[{"*", "*"}].sample_templates = {"always the same line"};
    SimBackend sim(script, "sim");
    auto cfg = small_config(StrategyKind::kTargetDemos, 10);
    cfg.max_generation_rounds = 3;
    RunContext ctx;
    ctx.generator = &sim;
    const auto run = run_strategy(Task::kTopic, "cy", cfg, f.gold, ctx);
    CHECK(run.status == RunStatus::kComplete);
    for (const auto& name : f.target.label_names()) {
      CHECK(run.counts.at(name).accepted == 1);
      CHECK(run.counts.at(name).rounds == 3);
      CHECK(run.shortfalls.at(name) == 9);
    }
  }

  TEST_CASE("runs are deterministic and independent of the job count") {
    Fixture f;
    SimBackend sim(sim_script(0.6, 0.1, 0.1, 8), "sim");
    auto cfg = small_config(StrategyKind::kTargetDemosSLRev, 20);
    RunContext a;
    a.generator = &sim;
    a.jobs = 1;
    RunContext b;
    b.generator = &sim;
    b.jobs = 3;
    const auto r1 = run_strategy(Task::kTopic, "cy", cfg, f.gold, a);
    const auto r2 = run_strategy(Task::kTopic, "cy", cfg, f.gold, b);
    CHECK(r1.run_id == r2.run_id);
    CHECK(r1.content_hash() == r2.content_hash());
    CHECK(r1.samples == r2.samples);
    cfg.seed = 1;
    CHECK(run_strategy(Task::kTopic, "cy", cfg, f.gold, a).content_hash() != r1.content_hash());
  }

  TEST_CASE("interrupted runs resume to the same content") {
    Fixture f;
    SimBackend sim(sim_script(0.7, 0.05, 0.05, 3), "sim");
    const auto cfg = small_config(StrategyKind::kTargetDemosSLRev, 30);
    RunContext full_ctx;
    full_ctx.generator = &sim;
    const auto full = run_strategy(Task::kTopic, "cy", cfg, f.gold, full_ctx);

    std::optional<GenerationRun> last;
    std::atomic<int> rounds{0};
    RunContext ctx;
    ctx.generator = &sim;
    ctx.jobs = 2;
    ctx.hooks.checkpoint = [&](const GenerationRun& r) { last = r; };
    ctx.hooks.should_stop = [&](const std::string&, const LabelCounts&) { return ++rounds > 4; };
    CHECK_THROWS_AS(run_strategy(Task::kTopic, "cy", cfg, f.gold, ctx), RunInterrupted);
    REQUIRE(last);
    CHECK(last->status == RunStatus::kPartial);
    CHECK(last->samples.size() < full.samples.size());

    RunContext resume_ctx;
    resume_ctx.generator = &sim;
    const auto resumed = run_strategy(Task::kTopic, "cy", cfg, f.gold, resume_ctx, &*last);
    CHECK(resumed.content_hash() == full.content_hash());
    CHECK_THROWS_AS(run_strategy(Task::kTopic, "cy", cfg, f.gold, resume_ctx, &resumed), ConfigError);
    auto other = cfg;
    other.seed = 5;
    CHECK_THROWS_AS(run_strategy(Task::kTopic, "cy", other, f.gold, resume_ctx, &*last), ConfigError);
  }

  TEST_CASE("backend failures mark the run failed") {
    Fixture f;
    struct Failing final : Backend {
      ChatResult chat(std::span<const ChatMessage>) override { throw BackendError("boom", 500); }
      std::vector<std::vector<double>> embed(std::span<const std::string>) override { return {}; }
      std::string model_id() const override { return "failing"; }
    } failing;
    std::optional<RunStatus> status;
    RunContext ctx;
    ctx.generator = &failing;
    ctx.hooks.checkpoint = [&](const GenerationRun& r) { status = r.status; };
    CHECK_THROWS_AS(run_strategy(Task::kTopic, "cy", small_config(StrategyKind::kTargetDemos), f.gold, ctx),
                    BackendError);
    CHECK(status == RunStatus::kFailed);
  }

  TEST_CASE("summaries come from the cache before the backend, and are cached") {
    Fixture f;
    MapCache cache;
    cache.put(Task::kTopic, "label_0", "cached summary zero");
    testutil::FixedBackend summarizer;
    summarizer.reply = "This intent involves\n  things.\n\n";
    SimBackend sim(sim_script(1.0), "sim");
    RunContext ctx;
    ctx.generator = &sim;
    ctx.summarizer = &summarizer;
    ctx.summaries = &cache;
    const auto run = run_strategy(Task::kTopic, "cy", small_config(StrategyKind::kSL, 5), f.gold, ctx);
    CHECK(summarizer.chats.load() == 2);
    CHECK(run.labels[0].summary == "cached summary zero");
    CHECK(run.labels[1].summary == "This intent involves things.");
    CHECK(cache.entries.size() == 3);
    run_strategy(Task::kTopic, "de", small_config(StrategyKind::kTargetDemosSL, 5), f.gold, ctx);
    CHECK(summarizer.chats.load() == 2);
  }

  TEST_CASE("an empty summary is an error and is not cached") {
    Fixture f;
    MapCache cache;
    testutil::FixedBackend summarizer;
    summarizer.reply = " \n \n";
    CHECK_THROWS_AS(summarize_label("label_0", f.english, summarizer, 10, &cache), BackendError);
    CHECK(cache.entries.empty());
  }

  TEST_CASE("summary strategies need English gold when no summary is known") {
    Fixture f;
    SimBackend sim(sim_script(1.0), "sim");
    RunContext ctx;
    ctx.generator = &sim;
    GoldSources only_target{&f.target, nullptr};
    CHECK_THROWS_AS(run_strategy(Task::kTopic, "cy", small_config(StrategyKind::kSL), only_target, ctx), ConfigError);
    CHECK_THROWS_AS(run_strategy(Task::kTopic, "cy", small_config(StrategyKind::kEnDemosRev), only_target, ctx),
                    ConfigError);
    CHECK_NOTHROW(run_strategy(Task::kTopic, "cy", small_config(StrategyKind::kTargetDemos, 3), only_target, ctx));
  }

  TEST_CASE("revise_batch splits into ceil(n / batch) judge calls") {
    SimBackend sim(sim_script(1.0), "judge");
    for (std::size_t n : {1u, 9u, 10u, 11u, 25u}) {
      testutil::RecordingBackend rec(sim);
      std::vector<LabeledExample> samples(n);
      for (std::size_t i = 0; i < n; ++i) {
        samples[i].id = "s" + std::to_string(i);
        samples[i].text = "text " + std::to_string(i);
      }
      const auto verdicts = revise_batch(samples, {"l", "summary"}, rec, 10, {Task::kIntent, "cy"});
      CHECK(verdicts.size() == n);
      CHECK(rec.calls().size() == (n + 9) / 10);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(verdicts[i].sample_id == samples[i].id);
        CHECK(verdicts[i].judge_model == "judge");
      }
    }
  }

  TEST_CASE("judge failure mode decides unparseable verdicts") {
    testutil::FixedBackend judge;
    judge.reply = "I cannot decide.";
    std::vector<LabeledExample> samples(3);
    for (std::size_t i = 0; i < 3; ++i) samples[i].text = "t" + std::to_string(i);
    for (const auto& v : revise_batch(samples, {"l", "s"}, judge, 10, {}, FailMode::kOpen)) CHECK(v.accepted);
    for (const auto& v : revise_batch(samples, {"l", "s"}, judge, 10, {}, FailMode::kClosed)) CHECK_FALSE(v.accepted);
  }

  TEST_CASE("rejection stats are rounded and need a revision strategy") {
    GenerationRun run;
    run.strategy.kind = StrategyKind::kTargetDemosRev;
    run.counts["a"] = LabelCounts{100, 65, 35, 0, 10, 10};
    run.counts["b"] = LabelCounts{100, 66, 34, 0, 10, 10};
    run.counts["c"] = LabelCounts{3, 2, 1, 0, 1, 1};
    const auto stats = rejection_stats(run);
    CHECK(stats.per_label.at("a") == 0.35);
    CHECK(stats.per_label.at("c") == 0.3333);
    CHECK(stats.judged == 203);
    CHECK(stats.rejected == 70);
    CHECK(stats.total == 0.3448);
    run.strategy.kind = StrategyKind::kTargetDemosSL;
    CHECK_THROWS_AS(rejection_stats(run), ConfigError);
  }

  TEST_CASE("content hash ignores status but covers samples, verdicts and counts") {
    Fixture f;
    SimBackend sim(sim_script(0.8), "sim");
    RunContext ctx;
    ctx.generator = &sim;
    const auto run = run_strategy(Task::kTopic, "cy", small_config(StrategyKind::kTargetDemosRev, 5), f.gold, ctx);
    auto copy = run;
    copy.status = RunStatus::kPartial;
    CHECK(copy.content_hash() == run.content_hash());
    copy = run;
    copy.samples[0].text += "!";
    CHECK(copy.content_hash() != run.content_hash());
    copy = run;
    copy.verdicts[0].reason = "different";
    CHECK(copy.content_hash() != run.content_hash());
    copy = run;
    copy.counts.begin()->second.duplicates_removed += 1;
    CHECK(copy.content_hash() != run.content_hash());
  }

  TEST_CASE("run id depends on model, language, config and templates") {
    StrategyConfig cfg;
    const auto base = make_run_id(Task::kIntent, "cy", "m", cfg, "v1");
    CHECK(base.size() == 12);
    CHECK(base == make_run_id(Task::kIntent, "cy", "m", cfg, "v1"));
    CHECK(base != make_run_id(Task::kIntent, "de", "m", cfg, "v1"));
    CHECK(base != make_run_id(Task::kIntent, "cy", "m2", cfg, "v1"));
    CHECK(base != make_run_id(Task::kIntent, "cy", "m", cfg, "v2"));
    cfg.per_label = 99;
    CHECK(base != make_run_id(Task::kIntent, "cy", "m", cfg, "v1"));
  }

  TEST_CASE("generate_for_label fills quota without judging") {
    Fixture f;
    SimBackend sim(sim_script(0.0), "sim");
    auto cfg = small_config(StrategyKind::kTargetDemosRev, 12);
    const auto out = generate_for_label({"label_1", "s"}, Task::kTopic, "cy", cfg, f.gold, sim);
    CHECK(out.samples.size() == 12);
    CHECK(out.shortfall == 0);
    CHECK(out.counts.rejected == 0);
  }
}
