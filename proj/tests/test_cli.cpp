#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "synthgen/cli.hpp"
#include "synthgen/error.hpp"
#include "synthgen/store.hpp"

using namespace synthgen;
using testutil::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_subcommand(args, out, err);
  return {code, out.str(), err.str()};
}

void check_golden(const std::string& name, const std::string& actual) {
  const auto path = std::filesystem::path(SYNTHGEN_GOLDEN_DIR) / name;
  if (std::getenv("SYNTHGEN_UPDATE_GOLDEN") != nullptr) testutil::spit(path, actual);
  REQUIRE_MESSAGE(std::filesystem::exists(path), "missing golden file " << path);
  CHECK(testutil::slurp(path) == actual);
}

/// Toy gold data for intent in cy and en under <dir>/gold/.
std::string write_gold(const TempDir& dir, const std::vector<std::string>& langs = {"cy", "en"},
                       Task task = Task::kIntent) {
  for (const auto& lang : langs) {
    const auto gold = testutil::make_gold(task, lang, testutil::label_names(3), 20, 6);
    write_jsonl(dir / ("gold/" + std::string(to_string(task)) + "_" + lang + ".jsonl"), gold.examples);
  }
  return (dir / "gold/{task}_{lang}.jsonl").string();
}

std::vector<std::string> first_field_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help text golden snapshots") {
    const auto top = run({"--help"});
    CHECK(top.code == kExitOk);
    check_golden("help.txt", top.out);
    for (const std::string cmd : {"generate", "revise", "evaluate", "report", "export-training", "sweep-seeds",
                                  "summarize-labels", "serve-sim", "validate-config"}) {
      const auto r = run({cmd, "--help"});
      CHECK(r.code == kExitOk);
      check_golden("help_" + cmd + ".txt", r.out);
    }
  }

  TEST_CASE("exit codes for usage errors") {
    CHECK(run({}).code == kExitConfig);
    CHECK(run({"frobnicate"}).code == kExitConfig);
    CHECK(run({"generate", "--no-such-flag"}).code == kExitConfig);
    CHECK(run({"--jobs", "0", "generate"}).code == kExitConfig);
    CHECK(run({"report"}).code == kExitConfig);
    CHECK(run({"--seed", "abc", "generate", "--lang", "cy", "--strategy", "sl"}).code == kExitConfig);
    TempDir dir;
    CHECK(run({"generate", "--lang", "fr", "--strategy", "sl", "--run-root", dir.path().string()}).code ==
          kExitConfig);
    CHECK(run({"generate", "--lang", "cy", "--strategy", "nope", "--run-root", dir.path().string()}).code ==
          kExitConfig);
    // Gold data required but not configured.
    const auto r = run({"generate", "--lang", "cy", "--strategy", "sl", "--run-root", dir.path().string()});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("paths.gold") != std::string::npos);
  }

  TEST_CASE("validate-config lists every violation and names paths.gold") {
    TempDir dir;
    testutil::spit(dir / "c.json", R"({"tasks":["intent"],"languages":["cy","xx"],"strategies":["sl"],"bogus":1})");
    const auto r = run({"--config", (dir / "c.json").string(), "validate-config"});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("paths.gold: missing") != std::string::npos);
    CHECK(r.err.find("bogus: unknown key") != std::string::npos);
    CHECK(r.err.find("'xx'") != std::string::npos);

    const auto gold = write_gold(dir);
    nlohmann::json ok = {{"tasks", {"intent"}},
                         {"languages", {"cy"}},
                         {"strategies", {"target-demos-sl-rev"}},
                         {"paths", {{"gold", gold}, {"run_root", (dir / "runs").string()}}}};
    testutil::spit(dir / "ok.json", ok.dump());
    const auto good = run({"--config", (dir / "ok.json").string(), "validate-config"});
    CHECK(good.code == kExitOk);
    CHECK(good.out == "config ok\n");

    ok["languages"] = {"cy", "de"};
    testutil::spit(dir / "missing.json", ok.dump());
    const auto missing = run({"--config", (dir / "missing.json").string(), "validate-config"});
    CHECK(missing.code == kExitConfig);
    CHECK(missing.err.find("paths.gold: ") != std::string::npos);
    CHECK(missing.err.find("intent_de.jsonl") != std::string::npos);
    CHECK(run({"--config", (dir / "absent.json").string(), "validate-config"}).code == kExitConfig);
  }

  TEST_CASE("environment interpolation") {
    ::setenv("SYNTHGEN_TEST_ROOT", "/data/x", 1);
    std::vector<std::string> violations;
    const auto j = interpolate_env({{"paths", {{"gold", "${SYNTHGEN_TEST_ROOT}/{task}_{lang}.jsonl"}}},
                                    {"list", {"${SYNTHGEN_TEST_UNSET_VAR}", 3}}},
                                   violations);
    CHECK(j["paths"]["gold"] == "/data/x/{task}_{lang}.jsonl");
    CHECK(j["list"][1] == 3);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("list[0]") != std::string::npos);
    CHECK(violations[0].find("SYNTHGEN_TEST_UNSET_VAR") != std::string::npos);
  }

  TEST_CASE("config parsing collects model and generation settings") {
    std::vector<std::string> violations;
    const auto cfg = parse_pipeline_config(
        {{"tasks", {"topic", "sentiment"}},
         {"languages", {"sw"}},
         {"strategies", {"sl", "TargetDemos + Rev."}},
         {"models", {{"gpt", {{"base_url", "http://localhost:9"}, {"parallelism", 2}}}, {"toy", {{"kind", "sim"}}}}},
         {"judge_model", "gpt"},
         {"per_label", 50},
         {"generation", {{"revision_batch", 5}, {"refill_rejected", false}}},
         {"seeds", {1, 2, 3}},
         {"paths", {{"gold", "g/{task}/{lang}.jsonl"}}}},
        violations);
    CHECK(violations.empty());
    CHECK(cfg.tasks == std::vector<Task>{Task::kTopic, Task::kSentiment});
    CHECK(cfg.strategies == std::vector<StrategyKind>{StrategyKind::kSL, StrategyKind::kTargetDemosRev});
    REQUIRE(cfg.model("gpt"));
    CHECK(cfg.model("gpt")->backend.model_id == "gpt");
    CHECK(cfg.model("gpt")->backend.parallelism == 2);
    CHECK(cfg.model("toy")->kind == "sim");
    CHECK(cfg.generation.per_label == 50);
    CHECK(cfg.generation.revision_batch == 5);
    CHECK_FALSE(cfg.generation.refill_rejected);
    CHECK(cfg.seeds.size() == 3);
    CHECK(cfg.gold_path(Task::kTopic, "sw") == "g/topic/sw.jsonl");

    std::vector<std::string> bad;
    parse_pipeline_config({{"tasks", {"poetry"}}, {"models", {{"m", {{"kind", "grpc"}}}}}, {"metrics", {{"ngram_max", 0}}}},
                          bad);
    CHECK(bad.size() == 4);
  }

  TEST_CASE("count lists expand arithmetic progressions") {
    CHECK(parse_count_list("10,20,...,100") ==
          std::vector<std::size_t>{10, 20, 30, 40, 50, 60, 70, 80, 90, 100});
    CHECK(parse_count_list("5, 7") == std::vector<std::size_t>{5, 7});
    CHECK(parse_count_list("1,3,...,9,20") == std::vector<std::size_t>{1, 3, 5, 7, 9, 20});
    CHECK_THROWS_AS(parse_count_list("10,...,100"), ConfigError);
    CHECK_THROWS_AS(parse_count_list("10,20,...,95"), ConfigError);
    CHECK_THROWS_AS(parse_count_list("a,b"), ConfigError);
    CHECK_THROWS_AS(parse_count_list(""), ConfigError);
  }

  TEST_CASE("generate on the simulated backend, then rerun, evaluate and export") {
    TempDir dir;
    const auto gold = write_gold(dir);
    const auto root = (dir / "runs").string();
    const std::vector<std::string> args = {"--seed", "3", "generate", "--task", "intent", "--lang", "cy",
                                           "--strategy", "target-demos-sl-rev,sl", "--per-label", "6",
                                           "--demos-k", "4", "--gold", gold, "--run-root", root};
    const auto first = run(args);
    REQUIRE_MESSAGE(first.code == kExitOk, first.err);
    const auto lines = first_field_lines(first.out);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].starts_with("complete\t"));
    const auto run_id = lines[0].substr(9, 12);

    RunStore store(root);
    CHECK(store.list_runs().size() == 2);
    const auto loaded = store.load_run(run_id);
    CHECK(loaded.samples.size() == 18);
    CHECK(loaded.model_id.starts_with("sim-"));
    CHECK(std::filesystem::exists(root + "/summaries.json"));
    const auto transcript = testutil::slurp(store.run_dir(loaded) / kTranscriptFile);
    CHECK_FALSE(transcript.empty());

    const auto second = run(args);
    CHECK(second.code == kExitOk);
    CHECK(second.out == first.out);
    CHECK(store.load_run(run_id).content_hash() == loaded.content_hash());

    const auto eval = run({"evaluate", "--run", run_id, "--run-root", root, "--gold", gold});
    REQUIRE_MESSAGE(eval.code == kExitOk, eval.err);
    const auto metrics = nlohmann::json::parse(testutil::slurp(store.run_dir(loaded) / "metrics.json"));
    CHECK(metrics["run_id"] == run_id);
    CHECK(metrics["tfidf_sim"].is_number());
    CHECK(metrics["rejection_rate"].is_number());
    CHECK(metrics["ngram_div"].get<double>() > 0.0);

    const auto out_dir = (dir / "export").string();
    const auto exp = run({"export-training", "--run", run_id, "--run-root", root, "--out", out_dir, "--gold", gold});
    REQUIRE_MESSAGE(exp.code == kExitOk, exp.err);
    const auto train = read_jsonl(out_dir + "/train.jsonl");
    const auto dev = read_jsonl(out_dir + "/dev.jsonl");
    const auto test = read_jsonl(out_dir + "/test.jsonl");
    CHECK(train.size() + dev.size() == 18);
    CHECK(dev.size() == 3);
    CHECK(test.size() == 18);
    for (const auto& e : train) CHECK(e.text == normalize_for_training(e.text));
  }

  TEST_CASE("evaluate a samples file and gold-only diversity") {
    TempDir dir;
    const auto gold = write_gold(dir);
    const auto samples = testutil::make_gold(Task::kIntent, "cy", testutil::label_names(3), 5);
    write_jsonl(dir / "samples.jsonl", samples.examples);
    const auto r = run({"evaluate", "--task", "intent", "--lang", "cy", "--samples", (dir / "samples.jsonl").string(),
                        "--gold", gold, "--embed-backend", "sim", "--out", (dir / "m.json").string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const auto m = nlohmann::json::parse(testutil::slurp(dir / "m.json"));
    CHECK(m["embed_sim"].is_number());
    CHECK(m["rejection_rate"].is_null());
    const auto g = run({"evaluate", "--task", "intent", "--lang", "cy", "--gold-only", "--gold", gold});
    CHECK(g.code == kExitOk);
    CHECK(g.out.starts_with("ngram_div "));
  }

  TEST_CASE("revise splits a corpus file") {
    TempDir dir;
    const auto gold = write_gold(dir);
    const auto samples = testutil::make_gold(Task::kIntent, "cy", testutil::label_names(3), 12);
    write_jsonl(dir / "in.jsonl", samples.examples);
    testutil::spit(dir / "sim.json", R"({"seed":1,"behaviors":[{"accept_probability":0.5}]})");
    const auto r = run({"revise", "--task", "intent", "--lang", "cy", "--input", (dir / "in.jsonl").string(), "--out",
                        (dir / "rev").string(), "--gold", gold, "--sim-script", (dir / "sim.json").string(),
                        "--run-root", (dir / "runs").string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(r.out.starts_with("judged 36, rejected "));
    const auto accepted = read_jsonl(dir / "rev/accepted.jsonl");
    const auto rejected = read_jsonl(dir / "rev/rejected.jsonl");
    CHECK(accepted.size() + rejected.size() == 36);
    CHECK_FALSE(rejected.empty());
    for (const auto& e : rejected) CHECK(e.meta.count("revision_reason") == 1);
  }

  TEST_CASE("report renders a table, diff and chart from results and trainer output") {
    TempDir dir;
    const auto table1 = std::string(SYNTHGEN_TEST_DATA) + "/table1_f1.csv";
    const auto md = run({"report", "--task", "intent", "--results", table1, "--diff"});
    REQUIRE_MESSAGE(md.code == kExitOk, md.err);
    CHECK(md.out.find("| intent | az |") == 0);
    CHECK(md.out.find("**87.74**") != std::string::npos);
    CHECK(md.out.find("target-demos-sl-rev") != std::string::npos);
    CHECK(md.out.find(" best\n") != std::string::npos);

    const auto csv = run({"report", "--task", "topic", "--results", table1, "--format", "csv", "--out",
                          (dir / "t.csv").string(), "--chart", "diff_bars", "--chart-out", (dir / "chart").string()});
    REQUIRE_MESSAGE(csv.code == kExitOk, csv.err);
    CHECK(testutil::slurp(dir / "t.csv").starts_with("row,az,"));
    CHECK(std::filesystem::exists(dir / "chart.csv"));
    CHECK(std::filesystem::exists(dir / "chart.svg"));

    testutil::spit(dir / "res.json", R"({"per_seed_f1":[0.7,0.72],"mean_f1":0.71,"epochs_run":[4,5],"config":{}})");
    testutil::spit(dir / "gold.json", R"({"per_seed_f1":[0.9],"mean_f1":0.9,"epochs_run":[4],"config":{}})");
    const auto tr = run({"report", "--task", "topic", "--trainer-result", "topic,sw,m,sl=" + (dir / "res.json").string(),
                         "--trainer-result", "topic,sw,m,gold=" + (dir / "gold.json").string(), "--diff"});
    REQUIRE_MESSAGE(tr.code == kExitOk, tr.err);
    CHECK(tr.out.find("71.00") != std::string::npos);
    CHECK(tr.out.find("sl 19.00 best") != std::string::npos);
    CHECK(run({"report", "--task", "topic", "--trainer-result", "bad"}).code == kExitConfig);
  }

  TEST_CASE("sweep-seeds exports per k and charts tf-idf scores") {
    TempDir dir;
    const auto gold = write_gold(dir, {"cy"}, Task::kTopic);
    const auto r = run({"--seed", "1", "sweep-seeds", "--task", "topic", "--lang", "cy", "--strategy", "target-demos",
                        "--k", "2,4", "--seeds", "1,2", "--score", "tfidf", "--gold", gold, "--run-root",
                        (dir / "runs").string(), "--out", (dir / "sweep").string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(std::filesystem::exists(dir / "sweep/target-demos/k4/seed2/train.jsonl"));
    CHECK(std::filesystem::exists(dir / "sweep/gold/k2/train.jsonl"));
    CHECK(read_jsonl(dir / "sweep/gold/k2/train.jsonl").size() == 6);
    const auto chart = testutil::slurp(dir / "sweep/seed_sweep.csv");
    CHECK(chart.find("2,target-demos,") != std::string::npos);
    CHECK(chart.find("4,target-demos,") != std::string::npos);

    const auto f1 = run({"sweep-seeds", "--task", "topic", "--lang", "cy", "--strategy", "target-demos", "--k", "2",
                         "--seeds", "1", "--gold", gold, "--run-root", (dir / "runs").string(), "--out",
                         (dir / "sweep2").string()});
    CHECK(f1.code == kExitOk);
    CHECK(f1.out.find("chart needs 1 trainer result") != std::string::npos);
  }

  TEST_CASE("json logging writes one object per line") {
    TempDir dir;
    const auto r = run({"--log-json", "generate", "--lang", "cy", "--strategy", "sl", "--run-root",
                        dir.path().string()});
    CHECK(r.code == kExitConfig);
    for (const auto& line : first_field_lines(r.err)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("level"));
      CHECK(j.contains("msg"));
    }
  }
}
