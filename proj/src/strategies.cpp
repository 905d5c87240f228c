#include "synthgen/strategies.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>

#include "synthgen/error.hpp"
#include "synthgen/hashing.hpp"
#include "synthgen/parallel.hpp"
#include "synthgen/random.hpp"
#include "synthgen/unicode.hpp"

namespace synthgen {
namespace {

struct StrategyInfo {
  StrategyKind kind;
  std::string_view cli;
  std::string_view display;
  StrategyTraits traits;
};

// Row order of the results tables.
constexpr std::array<StrategyInfo, 7> kStrategies{{
    {StrategyKind::kSL, "sl", "Summarized Label (SL)", {true, DemoSource::kNone, false}},
    {StrategyKind::kEnDemosSL, "en-demos-sl", "EnglishDemos + SL", {true, DemoSource::kEnglish, false}},
    {StrategyKind::kEnDemosRev, "en-demos-rev", "EnglishDemos + Rev.", {false, DemoSource::kEnglish, true}},
    {StrategyKind::kTargetDemos, "target-demos", "TargetDemos", {false, DemoSource::kTarget, false}},
    {StrategyKind::kTargetDemosSL, "target-demos-sl", "TargetDemos + SL", {true, DemoSource::kTarget, false}},
    {StrategyKind::kTargetDemosRev, "target-demos-rev", "TargetDemos + Rev.", {false, DemoSource::kTarget, true}},
    {StrategyKind::kTargetDemosSLRev, "target-demos-sl-rev", "TargetDemos + SL + Rev.",
     {true, DemoSource::kTarget, true}},
}};

constexpr std::array<StrategyKind, 7> kKinds{StrategyKind::kSL,           StrategyKind::kEnDemosSL,
                                             StrategyKind::kEnDemosRev,   StrategyKind::kTargetDemos,
                                             StrategyKind::kTargetDemosSL, StrategyKind::kTargetDemosRev,
                                             StrategyKind::kTargetDemosSLRev};

const StrategyInfo& info(StrategyKind kind) {
  for (const auto& s : kStrategies) {
    if (s.kind == kind) return s;
  }
  throw ConfigError("unknown strategy kind");
}

double round4(double x) { return std::round(x * 1e4) / 1e4; }

std::string dedup_key(std::string_view text) { return unicode::casefold(unicode::trim(text)); }

struct LabelState {
  LabelSpec label;
  std::vector<LabeledExample> accepted;
  std::vector<LabeledExample> rejected;
  std::vector<RevisionVerdict> verdicts;
  LabelCounts counts;
  std::set<std::string> seen;
};

struct PipelineParams {
  Task task;
  std::string language;
  std::string run_id;
  const StrategyConfig& cfg;
  StrategyTraits traits;
  const GoldSources& gold;
  Backend& generator;
  Backend& judge;
  const PromptTemplates& templates;
};

std::size_t remaining(const PipelineParams& p, const LabelState& s) {
  const auto used = s.accepted.size() + (p.traits.revision && !p.cfg.refill_rejected ? s.rejected.size() : 0);
  return used >= p.cfg.per_label ? 0 : p.cfg.per_label - used;
}

bool finished(const PipelineParams& p, const LabelState& s) {
  return remaining(p, s) == 0 || s.counts.rounds >= p.cfg.max_generation_rounds;
}

std::vector<Demonstration> round_demos(const PipelineParams& p, const std::string& label, std::size_t round) {
  const Dataset* source = nullptr;
  switch (p.traits.demos) {
    case DemoSource::kNone: return {};
    case DemoSource::kEnglish: source = p.gold.english; break;
    case DemoSource::kTarget: source = p.gold.target; break;
  }
  if (source == nullptr) throw ConfigError("strategy needs demonstration gold data that was not supplied");
  const auto picked = sample_demonstrations(*source, label, p.cfg.demos_k,
                                            derive_seed(p.cfg.seed, "round/" + std::to_string(round)));
  std::vector<Demonstration> demos;
  demos.reserve(picked.size());
  for (const auto& e : picked) demos.push_back({e.text, e.language.empty() ? source->language : e.language});
  return demos;
}

void run_round(const PipelineParams& p, LabelState& s) {
  const auto& name = s.label.name;
  const auto round = s.counts.rounds;
  PromptContext ctx;
  ctx.task = p.task;
  ctx.label = s.label;
  if (!p.traits.summary_in_prompt) ctx.label.summary.reset();
  ctx.include_summary = p.traits.summary_in_prompt;
  ctx.demos = round_demos(p, name, round);
  ctx.require_demos = p.traits.demos != DemoSource::kNone;
  ctx.target_language = p.language;
  ctx.n_requested = std::min(p.cfg.samples_per_call, remaining(p, s));
  ctx.nonce = derive_seed(p.cfg.seed, "generate/" + name + "/" + std::to_string(round));

  const auto completion = p.generator.chat(render_generation_prompt(ctx, p.templates)).content;
  auto parsed = parse_generation_output(completion, ctx.n_requested);

  std::vector<LabeledExample> pending;
  for (auto& text : parsed.samples) {
    ++s.counts.generated;
    if (!s.seen.insert(dedup_key(text)).second) {
      ++s.counts.duplicates_removed;
      continue;
    }
    LabeledExample e;
    e.id = p.run_id + ":" + name + ":" + std::to_string(s.accepted.size() + s.rejected.size() + pending.size());
    e.text = std::move(text);
    e.label = name;
    e.language = p.language;
    e.split = Split::kTrain;
    e.source = Source::kGenerated;
    e.meta = {{"strategy", std::string(cli_name(p.cfg.kind))},
              {"model", p.generator.model_id()},
              {"run_id", p.run_id},
              {"round", std::to_string(round)}};
    pending.push_back(std::move(e));
  }

  if (p.traits.revision && !pending.empty()) {
    auto verdicts = revise_batch(pending, s.label, p.judge, p.cfg.revision_batch, {p.task, p.language},
                                 p.cfg.judge_fail_mode, p.templates);
    s.counts.judge_calls += (pending.size() + p.cfg.revision_batch - 1) / p.cfg.revision_batch;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      if (verdicts[i].accepted) {
        s.accepted.push_back(std::move(pending[i]));
      } else {
        pending[i].meta["revision_reason"] = verdicts[i].reason;
        s.rejected.push_back(std::move(pending[i]));
      }
      s.verdicts.push_back(std::move(verdicts[i]));
    }
  } else {
    for (auto& e : pending) s.accepted.push_back(std::move(e));
  }
  s.counts.accepted = s.accepted.size();
  s.counts.rejected = s.rejected.size();
  ++s.counts.rounds;
}

GenerationRun assemble(const GenerationRun& header, const std::vector<LabelState>& states, RunStatus status,
                       std::size_t per_label) {
  GenerationRun run = header;
  run.status = status;
  run.labels.clear();
  for (const auto& s : states) {
    run.labels.push_back(s.label);
    run.samples.insert(run.samples.end(), s.accepted.begin(), s.accepted.end());
    run.rejected.insert(run.rejected.end(), s.rejected.begin(), s.rejected.end());
    run.verdicts.insert(run.verdicts.end(), s.verdicts.begin(), s.verdicts.end());
    run.counts[s.label.name] = s.counts;
    if (status == RunStatus::kComplete && s.accepted.size() < per_label) {
      run.shortfalls[s.label.name] = per_label - s.accepted.size();
    }
  }
  return run;
}

}  // namespace

std::span<const StrategyKind> all_strategies() { return kKinds; }
StrategyTraits traits(StrategyKind kind) { return info(kind).traits; }
std::string_view cli_name(StrategyKind kind) { return info(kind).cli; }
std::string_view display_name(StrategyKind kind) { return info(kind).display; }

StrategyKind parse_strategy(std::string_view name) {
  for (const auto& s : kStrategies) {
    if (s.cli == name || s.display == name) return s.kind;
  }
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected sl, en-demos-sl, en-demos-rev, target-demos, target-demos-sl, target-demos-rev or "
                    "target-demos-sl-rev)");
}

void StrategyConfig::validate() const {
  if (per_label < 1) throw ConfigError("per_label must be >= 1");
  if (samples_per_call < 1) throw ConfigError("samples_per_call must be >= 1");
  if (revision_batch < 1) throw ConfigError("revision_batch must be >= 1");
  if (max_generation_rounds < 1) throw ConfigError("max_generation_rounds must be >= 1");
  if (traits(kind).demos != DemoSource::kNone && demos_k < 1) throw ConfigError("demos_k must be >= 1");
  if (traits(kind).needs_summary() && summary_k < 1) throw ConfigError("summary_k must be >= 1");
}

nlohmann::json StrategyConfig::to_json() const {
  return {{"kind", cli_name(kind)},
          {"per_label", per_label},
          {"demos_k", demos_k},
          {"max_generation_rounds", max_generation_rounds},
          {"revision_batch", revision_batch},
          {"samples_per_call", samples_per_call},
          {"summary_k", summary_k},
          {"refill_rejected", refill_rejected},
          {"judge_fail_mode", judge_fail_mode == FailMode::kOpen ? "open" : "closed"},
          {"seed", seed}};
}

StrategyConfig StrategyConfig::from_json(const nlohmann::json& j) {
  StrategyConfig c;
  try {
    c.kind = parse_strategy(j.at("kind").get<std::string>());
    c.per_label = j.value("per_label", c.per_label);
    c.demos_k = j.value("demos_k", c.demos_k);
    c.max_generation_rounds = j.value("max_generation_rounds", c.max_generation_rounds);
    c.revision_batch = j.value("revision_batch", c.revision_batch);
    c.samples_per_call = j.value("samples_per_call", c.samples_per_call);
    c.summary_k = j.value("summary_k", c.summary_k);
    c.refill_rejected = j.value("refill_rejected", c.refill_rejected);
    c.judge_fail_mode = j.value("judge_fail_mode", std::string("open")) == "closed" ? FailMode::kClosed : FailMode::kOpen;
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad strategy config: ") + ex.what());
  }
  return c;
}

nlohmann::json to_json(const RevisionVerdict& v) {
  return {{"sample_id", v.sample_id}, {"accepted", v.accepted}, {"reason", v.reason}, {"judge_model", v.judge_model}};
}

RevisionVerdict verdict_from_json(const nlohmann::json& j) {
  try {
    return {j.at("sample_id").get<std::string>(), j.at("accepted").get<bool>(), j.at("reason").get<std::string>(),
            j.at("judge_model").get<std::string>()};
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("bad verdict record: ") + ex.what());
  }
}

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::kRunning: return "running";
    case RunStatus::kComplete: return "complete";
    case RunStatus::kFailed: return "failed";
    case RunStatus::kPartial: return "partial";
  }
  return "failed";
}

RunStatus parse_run_status(std::string_view name) {
  if (name == "running") return RunStatus::kRunning;
  if (name == "complete") return RunStatus::kComplete;
  if (name == "failed") return RunStatus::kFailed;
  if (name == "partial") return RunStatus::kPartial;
  throw DataError("unknown run status '" + std::string(name) + "'");
}

std::string GenerationRun::content_hash() const {
  std::string blob = to_jsonl(samples);
  blob += '\0';
  blob += to_jsonl(rejected);
  blob += '\0';
  for (const auto& v : verdicts) blob += to_json(v).dump() + "\n";
  blob += '\0';
  for (const auto& [label, c] : counts) {
    blob += label + ":" + std::to_string(c.generated) + "," + std::to_string(c.accepted) + "," +
            std::to_string(c.rejected) + "," + std::to_string(c.duplicates_removed) + "," +
            std::to_string(c.rounds) + "\n";
  }
  return sha256_hex(blob);
}

Dataset GenerationRun::corpus() const {
  Dataset ds;
  ds.task = task;
  ds.language = language;
  ds.labels = labels;
  ds.examples = samples;
  return ds;
}

std::string clean_summary(std::string_view completion) {
  std::string out;
  std::size_t pos = 0;
  while (pos <= completion.size()) {
    auto nl = completion.find('\n', pos);
    if (nl == std::string_view::npos) nl = completion.size();
    const auto line = unicode::trim(completion.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += line;
  }
  return out;
}

LabelSpec summarize_label(std::string_view label_name, const Dataset& english_gold, Backend& backend, std::size_t k,
                          SummaryCache* cache, const PromptTemplates& templates) {
  const std::string name(label_name);
  if (cache) {
    if (auto hit = cache->get(english_gold.task, name)) return {name, *hit};
  }
  const auto demos = sample_demonstrations(english_gold, name, k, derive_seed(0, "summary"));
  std::vector<std::string> texts;
  texts.reserve(demos.size());
  for (const auto& d : demos) texts.push_back(d.text);
  const auto completion = backend.chat(render_summary_prompt(name, texts, english_gold.task, templates)).content;
  auto summary = clean_summary(completion);
  if (summary.empty()) throw BackendError("summary for label '" + name + "' came back empty", 200);
  if (cache) cache->put(english_gold.task, name, summary);
  return {name, summary};
}

std::vector<RevisionVerdict> revise_batch(std::span<const LabeledExample> samples, const LabelSpec& label,
                                          Backend& judge, std::size_t batch, const RevisionTarget& target,
                                          FailMode mode, const PromptTemplates& templates) {
  if (batch < 1) throw ConfigError("revision batch must be >= 1");
  std::vector<RevisionVerdict> out;
  out.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += batch) {
    const auto end = std::min(samples.size(), begin + batch);
    std::vector<std::string> texts;
    for (auto i = begin; i < end; ++i) texts.push_back(samples[i].text);
    const auto completion = judge.chat(render_revision_prompt(label, texts, target, templates)).content;
    const auto parsed = parse_revision_output(completion, texts.size(), mode);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto& pv = parsed.verdicts[i];
      out.push_back({samples[begin + i].id, pv.verdict == Verdict::kAccept, pv.reason, judge.model_id()});
    }
  }
  return out;
}

std::string make_run_id(Task task, std::string_view language, std::string_view model_id, const StrategyConfig& cfg,
                        std::string_view templates_version) {
  const nlohmann::json key = {{"task", to_string(task)},
                              {"language", language},
                              {"model", model_id},
                              {"strategy", cfg.to_json()},
                              {"templates", templates_version}};
  return sha256_hex(key.dump()).substr(0, 12);
}

LabelGeneration generate_for_label(const LabelSpec& label, Task task, const std::string& language,
                                   const StrategyConfig& cfg, const GoldSources& gold, Backend& backend,
                                   const PromptTemplates& templates) {
  cfg.validate();
  auto tr = traits(cfg.kind);
  tr.revision = false;
  PipelineParams p{task, language, "gen", cfg, tr, gold, backend, backend, templates};
  LabelState s;
  s.label = label;
  while (!finished(p, s)) run_round(p, s);
  LabelGeneration out;
  out.samples = std::move(s.accepted);
  out.counts = s.counts;
  out.shortfall = cfg.per_label - out.samples.size();
  return out;
}

GenerationRun run_strategy(Task task, const std::string& language, const StrategyConfig& cfg, const GoldSources& gold,
                           RunContext& ctx, const GenerationRun* resume_from) {
  cfg.validate();
  if (ctx.generator == nullptr) throw ConfigError("run context has no generator backend");
  Backend& generator = *ctx.generator;
  Backend& judge = ctx.judge ? *ctx.judge : generator;
  Backend& summarizer = ctx.summarizer ? *ctx.summarizer : generator;
  const auto tr = traits(cfg.kind);

  const Dataset* label_source = gold.target ? gold.target : gold.english;
  if (label_source == nullptr) throw ConfigError("run needs gold data to take its label set from");

  GenerationRun header;
  header.task = task;
  header.language = language;
  header.model_id = generator.model_id();
  header.strategy = cfg;
  header.run_id = make_run_id(task, language, header.model_id, cfg, ctx.templates.version());
  header.config_snapshot = {{"task", to_string(task)},
                            {"language", language},
                            {"model", header.model_id},
                            {"judge_model", judge.model_id()},
                            {"summary_model", summarizer.model_id()},
                            {"strategy", cfg.to_json()},
                            {"templates_version", ctx.templates.version()},
                            {"backend", ctx.backend_settings}};
  if (resume_from) {
    if (resume_from->run_id != header.run_id) {
      throw ConfigError("cannot resume run " + resume_from->run_id + " with a different configuration (" +
                        header.run_id + ")");
    }
    if (resume_from->status == RunStatus::kComplete) throw ConfigError("run " + header.run_id + " is already complete");
  }

  std::vector<LabelState> committed(label_source->labels.size());
  for (std::size_t i = 0; i < committed.size(); ++i) {
    auto& s = committed[i];
    s.label = {label_source->labels[i].name, std::nullopt};
    if (resume_from) {
      for (const auto& l : resume_from->labels) {
        if (l.name == s.label.name) s.label = l;
      }
      for (const auto& e : resume_from->samples) {
        if (e.label == s.label.name) s.accepted.push_back(e);
      }
      for (const auto& e : resume_from->rejected) {
        if (e.label == s.label.name) s.rejected.push_back(e);
      }
      std::set<std::string> ids;
      for (const auto& e : s.accepted) ids.insert(e.id);
      for (const auto& e : s.rejected) ids.insert(e.id);
      for (const auto& v : resume_from->verdicts) {
        if (ids.contains(v.sample_id)) s.verdicts.push_back(v);
      }
      for (const auto* list : {&s.accepted, &s.rejected}) {
        for (const auto& e : *list) s.seen.insert(dedup_key(e.text));
      }
      if (auto it = resume_from->counts.find(s.label.name); it != resume_from->counts.end()) s.counts = it->second;
    }
  }

  if (tr.needs_summary()) {
    for (auto& s : committed) {
      if (s.label.summary) continue;
      if (const auto& given = label_source->label(s.label.name).summary) {
        s.label.summary = given;
        continue;
      }
      if (ctx.summaries) {
        if (auto hit = ctx.summaries->get(task, s.label.name)) {
          s.label.summary = *hit;
          continue;
        }
      }
      if (gold.english == nullptr) {
        throw ConfigError("label '" + s.label.name + "' needs a summary but no English gold data was supplied");
      }
      s.label = summarize_label(s.label.name, *gold.english, summarizer, cfg.summary_k, ctx.summaries, ctx.templates);
    }
  }

  PipelineParams params{task, language, header.run_id, cfg, tr, gold, generator, judge, ctx.templates};
  std::mutex mu;
  std::atomic<bool> stop{false};
  auto checkpoint = [&](RunStatus status) {
    if (ctx.hooks.checkpoint) ctx.hooks.checkpoint(assemble(header, committed, status, cfg.per_label));
  };

  const std::size_t jobs = ctx.jobs ? ctx.jobs : static_cast<std::size_t>(std::max(generator.parallelism(), 1));
  try {
    parallel_for(committed.size(), jobs, [&](std::size_t i) {
      LabelState work;
      {
        std::lock_guard lock(mu);
        work = committed[i];
      }
      while (!finished(params, work)) {
        if (stop.load()) throw RunInterrupted("run stopped");
        if (ctx.hooks.should_stop && ctx.hooks.should_stop(work.label.name, work.counts)) {
          stop = true;
          throw RunInterrupted("run interrupted at label '" + work.label.name + "'");
        }
        run_round(params, work);
        std::lock_guard lock(mu);
        committed[i] = work;
        checkpoint(RunStatus::kRunning);
      }
    });
  } catch (const RunInterrupted&) {
    std::lock_guard lock(mu);
    checkpoint(RunStatus::kPartial);
    throw;
  } catch (...) {
    std::lock_guard lock(mu);
    checkpoint(RunStatus::kFailed);
    throw;
  }
  auto run = assemble(header, committed, RunStatus::kComplete, cfg.per_label);
  if (ctx.hooks.checkpoint) ctx.hooks.checkpoint(run);
  return run;
}

RejectionStats rejection_stats(const GenerationRun& run) {
  if (!traits(run.strategy.kind).revision) {
    throw ConfigError("rejection statistics need a revision strategy; run " + run.run_id + " uses " +
                      std::string(cli_name(run.strategy.kind)));
  }
  RejectionStats stats;
  for (const auto& [label, c] : run.counts) {
    stats.rejected += c.rejected;
    stats.judged += c.judged();
    stats.per_label[label] = c.judged() ? round4(static_cast<double>(c.rejected) / c.judged()) : 0.0;
  }
  stats.total = stats.judged ? round4(static_cast<double>(stats.rejected) / stats.judged) : 0.0;
  return stats;
}

}  // namespace synthgen
