#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "synthgen/error.hpp"
#include "synthgen/sim.hpp"

using namespace synthgen;

namespace {

SimScript script_with(double accept, double dup = 0.0, double off = 0.0, std::uint64_t seed = 1) {
  SimScript s;
  s.seed = seed;
  s.behaviors[{"*", "*"}] = SimBehavior{accept, {}, dup, off};
  return s;
}

std::vector<ChatMessage> generation(const std::string& label, std::size_t n, std::uint64_t nonce,
                                    const std::string& lang = "cy") {
  PromptContext ctx;
  ctx.task = Task::kTopic;
  ctx.label = {label, std::nullopt};
  ctx.target_language = lang;
  ctx.n_requested = n;
  ctx.nonce = nonce;
  return render_generation_prompt(ctx);
}

}  // namespace

TEST_SUITE("sim") {
  TEST_CASE("generation replies parse into exactly n samples") {
    const auto script = script_with(1.0);
    for (std::size_t n : {1u, 5u, 10u, 37u}) {
      const auto reply = sim_respond(generation("science", n, 3), script);
      const auto parsed = parse_generation_output(reply, n);
      CHECK(parsed.samples.size() == n);
      for (const auto& s : parsed.samples) CHECK(s.find("science") != std::string::npos);
    }
  }

  TEST_CASE("replies are a pure function of messages and script seed") {
    const auto a = sim_respond(generation("travel", 10, 1), script_with(1.0, 0, 0, 5));
    CHECK(a == sim_respond(generation("travel", 10, 1), script_with(1.0, 0, 0, 5)));
    CHECK(a != sim_respond(generation("travel", 10, 2), script_with(1.0, 0, 0, 5)));
    CHECK(a != sim_respond(generation("travel", 10, 1), script_with(1.0, 0, 0, 6)));
  }

  TEST_CASE("sample templates substitute label, word, num and language") {
    SimScript s;
    s.behaviors[{"*", "*"}].sample_templates = {"[{lang}] {label}: {word}/{num}"};
    const auto parsed = parse_generation_output(sim_respond(generation("food_order", 3, 0, "th"), s), 3);
    for (const auto& line : parsed.samples) CHECK(line.starts_with("[th] food order: "));
  }

  TEST_CASE("duplicate rate 1 repeats the first line") {
    const auto parsed = parse_generation_output(sim_respond(generation("x", 10, 0), script_with(1.0, 1.0)), 10);
    CHECK(std::set<std::string>(parsed.samples.begin(), parsed.samples.end()).size() == 1);
  }

  TEST_CASE("judge rejects off-language lines and follows accept probability") {
    const LabelSpec label{"science", "about science"};
    std::vector<std::string> samples = {"good one", std::string(kOffLanguageTag) + " bad", "another"};
    auto reply = sim_respond(render_revision_prompt(label, samples, {Task::kTopic, "cy"}), script_with(1.0));
    auto verdicts = parse_revision_output(reply, 3).verdicts;
    CHECK(verdicts[0].verdict == Verdict::kAccept);
    CHECK(verdicts[1].verdict == Verdict::kReject);
    CHECK(verdicts[1].reason == "written in the wrong language");
    CHECK(verdicts[2].verdict == Verdict::kAccept);
    reply = sim_respond(render_revision_prompt(label, samples, {Task::kTopic, "cy"}), script_with(0.0));
    for (const auto& v : parse_revision_output(reply, 3).verdicts) CHECK(v.verdict == Verdict::kReject);
  }

  TEST_CASE("empirical acceptance rate tracks accept_probability") {
    const auto script = script_with(0.3457);
    const LabelSpec label{"politics", "about politics"};
    std::size_t accepted = 0, total = 0;
    for (int call = 0; call < 400; ++call) {
      std::vector<std::string> samples;
      for (int i = 0; i < 10; ++i) samples.push_back("s" + std::to_string(call) + "_" + std::to_string(i));
      const auto reply = sim_respond(render_revision_prompt(label, samples, {Task::kTopic, "cy"}), script);
      for (const auto& v : parse_revision_output(reply, 10).verdicts) {
        accepted += v.verdict == Verdict::kAccept;
        ++total;
      }
    }
    const double rate = static_cast<double>(accepted) / static_cast<double>(total);
    // 4000 Bernoulli draws: sd about 0.0075.
    CHECK(std::abs(rate - 0.3457) < 0.03);
  }

  TEST_CASE("summary replies are a single non-empty paragraph") {
    const std::vector<std::string> demos = {"wake me up", "set alarm"};
    const auto reply = sim_respond(render_summary_prompt("alarm_set", demos), SimScript{0, {{{"*", "*"}, {}}}});
    CHECK(reply.starts_with("This intent involves"));
    CHECK(reply.find('\n') == std::string::npos);
  }

  TEST_CASE("behaviour lookup falls back through wildcards") {
    SimScript s;
    s.behaviors[{"cy", "topic"}].accept_probability = 0.1;
    s.behaviors[{"cy", "*"}].accept_probability = 0.2;
    s.behaviors[{"*", "topic"}].accept_probability = 0.3;
    CHECK(s.behavior("cy", "topic").accept_probability == 0.1);
    CHECK(s.behavior("cy", "intent").accept_probability == 0.2);
    CHECK(s.behavior("de", "topic").accept_probability == 0.3);
    CHECK_THROWS_AS(s.behavior("de", "intent"), ConfigError);
  }

  TEST_CASE("script json round trip and validation") {
    SimScript s = script_with(0.5, 0.1, 0.2, 9);
    s.behaviors[{"th", "intent"}].sample_templates = {"{label} {num}"};
    const auto back = SimScript::from_json(s.to_json());
    CHECK(back.to_json() == s.to_json());
    CHECK_THROWS_AS(SimScript::from_json({{"behaviors", {{{"accept_probability", 1.5}}}}}), ConfigError);
    CHECK_THROWS_AS(SimScript::from_json({{"seed", 1}}), ConfigError);
  }

  TEST_CASE("prompts without a marker cannot be routed") {
    const std::vector<ChatMessage> plain = {{ChatMessage::Role::kUser, "hello"}};
    CHECK_THROWS_AS(sim_respond(plain, script_with(1.0)), DataError);
  }

  TEST_CASE("sim embeddings are unit length and deterministic") {
    for (const auto* text : {"hello world", "Hello   WORLD", "a", "!!!", "ciao mondo ciao"}) {
      const auto v = sim_embedding(text);
      double norm = 0;
      for (double x : v) norm += x * x;
      CHECK(std::abs(norm - 1.0) < 1e-12);
      CHECK(v == sim_embedding(text));
    }
    CHECK(sim_embedding("hello world") == sim_embedding("HELLO world"));
  }

  TEST_CASE("sim server speaks the same protocol as the in-process backend") {
    const auto script = script_with(0.5, 0.0, 0.2, 3);
    SimServer server(script);
    const int port = server.start();
    BackendConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.model_id = "sim";
    HttpBackend http(cfg);
    SimBackend local(script, "sim");
    const auto messages = generation("sports", 10, 4);
    CHECK(http.chat(messages).content == local.chat(messages).content);
    const std::vector<std::string> texts = {"one two", "three"};
    const auto remote = http.embed(texts);
    const auto mine = local.embed(texts);
    REQUIRE(remote.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t d = 0; d < mine[i].size(); ++d) CHECK(remote[i][d] == doctest::Approx(mine[i][d]).epsilon(1e-12));
    }
    const std::vector<ChatMessage> plain = {{ChatMessage::Role::kUser, "hello"}};
    CHECK_THROWS_AS(http.chat(plain), BackendError);
    server.stop();
  }

  TEST_CASE("sim backend records usage in the transcript") {
    SimBackend backend(script_with(1.0), "sim-x");
    auto t = std::make_shared<Transcript>();
    backend.set_transcript(t);
    const auto r = backend.chat(generation("a", 2, 0));
    REQUIRE(r.usage);
    CHECK(r.usage->total_tokens == r.usage->prompt_tokens + r.usage->completion_tokens);
    REQUIRE(t->size() == 1);
    CHECK(t->entries()[0]["request"]["model"] == "sim-x");
  }
}
