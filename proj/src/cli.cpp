#include "synthgen/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <regex>
#include <set>
#include <thread>
#include <sstream>

#include <spdlog/sinks/base_sink.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "synthgen/error.hpp"
#include "synthgen/fsutil.hpp"
#include "synthgen/hashing.hpp"
#include "synthgen/parallel.hpp"
#include "synthgen/reporting.hpp"
#include "synthgen/sim.hpp"
#include "synthgen/store.hpp"

namespace synthgen {
namespace fs = std::filesystem;
namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

class SignalGuard {
 public:
  SignalGuard() {
    g_interrupted = false;
    prev_int_ = std::signal(SIGINT, on_signal);
    prev_term_ = std::signal(SIGTERM, on_signal);
  }
  ~SignalGuard() {
    std::signal(SIGINT, prev_int_);
    std::signal(SIGTERM, prev_term_);
  }

 private:
  void (*prev_int_)(int);
  void (*prev_term_)(int);
};

class JsonLineSink : public spdlog::sinks::base_sink<std::mutex> {
 public:
  explicit JsonLineSink(std::ostream& os) : os_(os) {}

 protected:
  void sink_it_(const spdlog::details::log_msg& msg) override {
    const auto us =
        std::chrono::duration_cast<std::chrono::microseconds>(msg.time.time_since_epoch()).count();
    const auto level = spdlog::level::to_string_view(msg.level);
    nlohmann::json j = {{"ts_us", us},
                        {"level", std::string(level.data(), level.size())},
                        {"logger", std::string(msg.logger_name.data(), msg.logger_name.size())},
                        {"msg", std::string(msg.payload.data(), msg.payload.size())}};
    os_ << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
  void flush_() override { os_.flush(); }

 private:
  std::ostream& os_;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err, bool json, const std::string& level) {
  spdlog::sink_ptr sink;
  if (json) {
    sink = std::make_shared<JsonLineSink>(err);
  } else {
    sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    sink->set_pattern("[%l] %v");
  }
  auto logger = std::make_shared<spdlog::logger>("synthgen", sink);
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw ConfigError("unknown log level '" + level + "'");
  logger->set_level(lvl);
  return logger;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item.push_back(c);
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

SimScript default_sim_script(std::uint64_t seed) {
  SimScript s;
  s.seed = seed;
  s.behaviors[{"*", "*"}] = SimBehavior{};
  return s;
}

std::string sim_model_id(const SimScript& script) {
  return "sim-" + sha256_hex(script.to_json().dump()).substr(0, 8);
}

struct Globals {
  std::string config_path;
  bool log_json = false;
  std::string log_level = "info";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool allow_any_language = false;
};

struct Session {
  Globals g;
  PipelineConfig cfg;
  std::ostream& out;
  std::ostream& err;
  std::shared_ptr<spdlog::logger> log;
  std::unique_ptr<FileSummaryCache> summaries;

  Session(std::ostream& o, std::ostream& e) : out(o), err(e) {}

  std::uint64_t seed() const { return g.seed.value_or(cfg.seeds.empty() ? 0 : cfg.seeds.front()); }

  FileSummaryCache& summary_cache() {
    if (!summaries) summaries = std::make_unique<FileSummaryCache>(cfg.run_root / "summaries.json");
    return *summaries;
  }

  PromptTemplates templates() const {
    return cfg.templates ? PromptTemplates::load(*cfg.templates) : PromptTemplates::defaults();
  }

  /// "sim" without a matching config entry is the built-in simulated model.
  std::unique_ptr<Backend> backend(const std::string& name, const std::optional<fs::path>& script_override) const {
    const ModelEntry* entry = cfg.model(name);
    if (entry == nullptr && name != "sim") {
      std::vector<std::string> names{"sim"};
      for (const auto& m : cfg.models) names.push_back(m.name);
      throw ConfigError("unknown backend '" + name + "' (configured: " + join(names, ", ") + ")");
    }
    if (entry == nullptr || entry->kind == "sim") {
      SimScript script = default_sim_script(0);
      if (script_override) {
        script = SimScript::load(*script_override);
      } else if (entry && entry->sim_script) {
        script = SimScript::load(*entry->sim_script);
      }
      const int par = entry ? entry->backend.parallelism : 4;
      std::string id = entry && !entry->backend.model_id.empty() ? entry->backend.model_id : sim_model_id(script);
      return std::make_unique<SimBackend>(std::move(script), std::move(id), par);
    }
    auto bc = entry->backend;
    if (!bc.api_key) {
      if (const char* key = std::getenv("SYNTHGEN_API_KEY")) bc.api_key = key;
    }
    return std::make_unique<HttpBackend>(bc);
  }
};

std::optional<Dataset> load_gold(const Session& s, Task task, const std::string& language, bool required) {
  if (s.cfg.gold_pattern.empty()) {
    if (required) throw ConfigError("paths.gold: no gold data pattern configured (use --gold or paths.gold)");
    return std::nullopt;
  }
  const auto path = s.cfg.gold_path(task, language);
  if (!fs::exists(path)) {
    if (required) throw ConfigError("paths.gold: gold file " + path.string() + " does not exist");
    return std::nullopt;
  }
  auto ds = load_corpus(path, task);
  ds.language = language;
  return ds;
}

/// Sample texts grouped under the dataset's labels; used where only train
/// split gold should count.
Dataset train_split(const Dataset& ds) {
  Dataset out = ds;
  out.examples.clear();
  for (const auto& e : ds.examples) {
    if (e.split == Split::kTrain) out.examples.push_back(e);
  }
  if (out.examples.empty()) out.examples = ds.examples;
  return out;
}

struct CellSpec {
  Task task;
  std::string language;
  std::string model;
  StrategyKind strategy;
  std::uint64_t seed;
};

struct CellOutcome {
  std::string run_id;
  fs::path dir;
  RunStatus status = RunStatus::kFailed;
  std::string error;
  bool config_error = false;
};

struct CellOverrides {
  std::optional<fs::path> sim_script;
  std::optional<std::size_t> per_label;
};

CellOutcome run_cell(Session& s, const CellSpec& cell, const CellOverrides& ov) {
  CellOutcome outcome;
  auto generator = s.backend(cell.model, ov.sim_script);
  std::unique_ptr<Backend> judge, summarizer;
  if (!s.cfg.judge_model.empty() && s.cfg.judge_model != cell.model) judge = s.backend(s.cfg.judge_model, ov.sim_script);
  if (!s.cfg.summary_model.empty() && s.cfg.summary_model != cell.model) {
    summarizer = s.backend(s.cfg.summary_model, ov.sim_script);
  }

  StrategyConfig sc = s.cfg.generation;
  sc.kind = cell.strategy;
  sc.seed = cell.seed;
  if (ov.per_label) sc.per_label = *ov.per_label;
  sc.validate();
  const auto tr = traits(cell.strategy);

  std::optional<Dataset> target, english;
  if (tr.demos == DemoSource::kTarget) target = train_split(*load_gold(s, cell.task, cell.language, true));
  if (tr.demos == DemoSource::kEnglish || tr.needs_summary()) {
    english = train_split(*load_gold(s, cell.task, "en", true));
  }
  GoldSources gold{target ? &*target : nullptr, english ? &*english : nullptr};

  RunContext ctx;
  ctx.generator = generator.get();
  ctx.judge = judge ? judge.get() : nullptr;
  ctx.summarizer = summarizer ? summarizer.get() : nullptr;
  ctx.summaries = &s.summary_cache();
  ctx.templates = s.templates();
  if (const auto* sim = dynamic_cast<const SimBackend*>(generator.get())) {
    ctx.backend_settings = {{"kind", "sim"}, {"script", sim->script().to_json()}};
  } else if (const auto* entry = s.cfg.model(cell.model)) {
    ctx.backend_settings = {{"kind", "http"}, {"settings", to_json(entry->backend)}};
  }

  const RunStore store(s.cfg.run_root);
  outcome.run_id = make_run_id(cell.task, cell.language, generator->model_id(), sc, ctx.templates.version());
  outcome.dir = store.run_dir(cell.task, cell.language, generator->model_id(), cell.strategy, outcome.run_id);
  RunLock lock(outcome.dir);

  std::optional<GenerationRun> previous;
  if (fs::exists(outcome.dir / kManifestFile)) {
    previous = store.load_run_dir(outcome.dir);
    if (previous->status == RunStatus::kComplete) {
      s.log->info("run {} is already complete in {}", outcome.run_id, outcome.dir.string());
      outcome.status = RunStatus::kComplete;
      return outcome;
    }
    s.log->info("resuming run {} from status {}", outcome.run_id, to_string(previous->status));
  }

  auto transcript = std::make_shared<Transcript>(outcome.dir / kTranscriptFile);
  for (auto* b : {ctx.generator, ctx.judge, ctx.summarizer}) {
    if (b) b->set_transcript(transcript);
  }
  ctx.hooks.checkpoint = [&](const GenerationRun& run) { store.persist_run(run); };
  ctx.hooks.should_stop = [](const std::string&, const LabelCounts&) { return g_interrupted.load(); };

  s.log->info("generating {} {}/{} with {} into {}", cli_name(cell.strategy), to_string(cell.task), cell.language,
              generator->model_id(), outcome.dir.string());
  try {
    const auto run = run_strategy(cell.task, cell.language, sc, gold, ctx, previous ? &*previous : nullptr);
    outcome.status = run.status;
    for (const auto& [label, c] : run.counts) {
      s.log->debug("{}: accepted {} rejected {} duplicates {} rounds {}", label, c.accepted, c.rejected,
                   c.duplicates_removed, c.rounds);
    }
    for (const auto& [label, n] : run.shortfalls) s.log->warn("label {} is {} samples short", label, n);
  } catch (const RunInterrupted& ex) {
    outcome.status = RunStatus::kPartial;
    outcome.error = std::string(ex.what()) + "; rerun the same command to resume";
  } catch (const ConfigError& ex) {
    outcome.error = ex.what();
    outcome.config_error = true;
  } catch (const std::exception& ex) {
    outcome.error = ex.what();
  }
  return outcome;
}

/// Config file first, then flags.
void load_config(Session& s) {
  if (!s.g.config_path.empty()) {
    std::vector<std::string> violations;
    s.cfg = load_pipeline_config(s.g.config_path, violations);
    if (!violations.empty()) throw ConfigError("invalid config:\n  " + join(violations, "\n  "));
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void check_language(const Session& s, const std::string& lang) {
  if (!s.g.allow_any_language && !is_evaluation_language(lang)) {
    throw ConfigError("language '" + lang + "' is not one of the evaluation languages (pass --allow-any-language)");
  }
}

std::uint64_t parse_seed(const std::string& text) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad seed '" + text + "'");
  }
}

struct ChartPaths {
  std::string kind = "none";
  std::string out;
};

}  // namespace

const ModelEntry* PipelineConfig::model(std::string_view name) const {
  for (const auto& m : models) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

fs::path PipelineConfig::gold_path(Task task, std::string_view language) const {
  std::string p = gold_pattern;
  auto replace = [&](const std::string& key, std::string_view value) {
    for (auto pos = p.find(key); pos != std::string::npos; pos = p.find(key, pos + value.size())) {
      p.replace(pos, key.size(), value);
    }
  };
  replace("{task}", to_string(task));
  replace("{lang}", language);
  return p;
}

nlohmann::json interpolate_env(const nlohmann::json& j, std::vector<std::string>& violations,
                               const std::string& where) {
  if (j.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [k, v] : j.items()) out[k] = interpolate_env(v, violations, where.empty() ? k : where + "." + k);
    return out;
  }
  if (j.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < j.size(); ++i) {
      out.push_back(interpolate_env(j[i], violations, where + "[" + std::to_string(i) + "]"));
    }
    return out;
  }
  if (!j.is_string()) return j;
  static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
  const auto text = j.get<std::string>();
  std::string out;
  std::size_t last = 0;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), var); it != std::sregex_iterator(); ++it) {
    out.append(text, last, it->position() - last);
    const auto name = (*it)[1].str();
    if (const char* value = std::getenv(name.c_str())) {
      out += value;
    } else {
      violations.push_back(where + ": environment variable " + name + " is not set");
    }
    last = it->position() + it->length();
  }
  out.append(text, last);
  return out;
}

PipelineConfig parse_pipeline_config(const nlohmann::json& raw, std::vector<std::string>& violations) {
  PipelineConfig cfg;
  if (!raw.is_object()) {
    violations.push_back("config: top level must be an object");
    return cfg;
  }
  const auto j = interpolate_env(raw, violations);
  auto guard = [&](const std::string& key, auto&& fn) {
    if (!j.contains(key)) return;
    try {
      fn(j.at(key));
    } catch (const std::exception& ex) {
      violations.push_back(key + ": " + ex.what());
    }
  };
  static const std::set<std::string> known{"tasks",  "languages", "models",     "strategies", "judge_model",
                                           "summary_model", "per_label", "demos_k", "seeds", "generation",
                                           "paths",  "metrics"};
  for (const auto& [k, _] : j.items()) {
    if (!known.contains(k)) violations.push_back(k + ": unknown key");
  }
  guard("tasks", [&](const nlohmann::json& v) {
    cfg.tasks.clear();
    for (const auto& t : v) cfg.tasks.push_back(parse_task(t.get<std::string>()));
  });
  guard("languages", [&](const nlohmann::json& v) { cfg.languages = v.get<std::vector<std::string>>(); });
  guard("strategies", [&](const nlohmann::json& v) {
    for (const auto& t : v) cfg.strategies.push_back(parse_strategy(t.get<std::string>()));
  });
  guard("models", [&](const nlohmann::json& v) {
    for (const auto& [name, m] : v.items()) {
      ModelEntry e;
      e.name = name;
      e.kind = m.value("kind", std::string("http"));
      if (e.kind != "http" && e.kind != "sim") {
        violations.push_back("models." + name + ".kind: expected http or sim");
        continue;
      }
      auto bc = m;
      bc.erase("kind");
      bc.erase("sim_script");
      if (!bc.contains("model_id")) bc["model_id"] = e.kind == "sim" ? "" : name;
      try {
        e.backend = backend_config_from_json(bc);
        if (e.kind == "http") e.backend.validate();
      } catch (const std::exception& ex) {
        violations.push_back("models." + name + ": " + ex.what());
      }
      if (m.contains("sim_script")) e.sim_script = m.at("sim_script").get<std::string>();
      cfg.models.push_back(std::move(e));
    }
  });
  guard("judge_model", [&](const nlohmann::json& v) { cfg.judge_model = v.get<std::string>(); });
  guard("summary_model", [&](const nlohmann::json& v) { cfg.summary_model = v.get<std::string>(); });
  guard("seeds", [&](const nlohmann::json& v) { cfg.seeds = v.get<std::vector<std::uint64_t>>(); });
  guard("generation", [&](const nlohmann::json& v) {
    auto g = v;
    g["kind"] = "sl";
    cfg.generation = StrategyConfig::from_json(g);
  });
  guard("per_label", [&](const nlohmann::json& v) { cfg.generation.per_label = v.get<std::size_t>(); });
  guard("demos_k", [&](const nlohmann::json& v) { cfg.generation.demos_k = v.get<std::size_t>(); });
  guard("paths", [&](const nlohmann::json& v) {
    for (const auto& [k, _] : v.items()) {
      if (k != "gold" && k != "run_root" && k != "templates") violations.push_back("paths." + k + ": unknown key");
    }
    cfg.gold_pattern = v.value("gold", std::string());
    if (v.contains("run_root")) cfg.run_root = v.at("run_root").get<std::string>();
    if (v.contains("templates")) cfg.templates = v.at("templates").get<std::string>();
  });
  guard("metrics", [&](const nlohmann::json& v) { cfg.metrics = MetricConfig::from_json(v); });
  if (!j.contains("paths") || !j.at("paths").contains("gold")) violations.push_back("paths.gold: missing");
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path, std::vector<std::string>& violations) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  const auto j = nlohmann::json::parse(read_file(path), nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return parse_pipeline_config(j, violations);
}

std::vector<std::string> validate_pipeline_config(const PipelineConfig& cfg, bool allow_any_language) {
  std::vector<std::string> v;
  if (cfg.tasks.empty()) v.push_back("tasks: empty");
  if (cfg.languages.empty()) v.push_back("languages: empty");
  for (const auto& lang : cfg.languages) {
    if (!allow_any_language && !is_evaluation_language(lang)) {
      v.push_back("languages: '" + lang + "' is not an evaluation language");
    }
  }
  if (cfg.strategies.empty()) v.push_back("strategies: empty");
  if (cfg.seeds.empty()) v.push_back("seeds: empty");
  for (const auto* key : {&cfg.judge_model, &cfg.summary_model}) {
    if (!key->empty() && *key != "sim" && cfg.model(*key) == nullptr) {
      v.push_back(std::string(key == &cfg.judge_model ? "judge_model" : "summary_model") + ": unknown model '" +
                  *key + "'");
    }
  }
  for (const auto& m : cfg.models) {
    if (m.sim_script && !fs::exists(*m.sim_script)) {
      v.push_back("models." + m.name + ".sim_script: " + m.sim_script->string() + " does not exist");
    }
  }
  try {
    cfg.generation.validate();
  } catch (const ConfigError& ex) {
    v.push_back(std::string("generation: ") + ex.what());
  }
  try {
    cfg.metrics.validate();
  } catch (const ConfigError& ex) {
    v.push_back(std::string("metrics: ") + ex.what());
  }
  if (cfg.templates && !fs::is_directory(*cfg.templates)) {
    v.push_back("paths.templates: " + cfg.templates->string() + " is not a directory");
  }
  if (cfg.gold_pattern.empty()) {
    v.push_back("paths.gold: missing");
  } else {
    bool english = false;
    for (auto k : cfg.strategies) english = english || traits(k).needs_summary() || traits(k).demos == DemoSource::kEnglish;
    for (auto task : cfg.tasks) {
      auto langs = cfg.languages;
      if (english && std::find(langs.begin(), langs.end(), "en") == langs.end()) langs.push_back("en");
      for (const auto& lang : langs) {
        const auto p = cfg.gold_path(task, lang);
        if (!fs::exists(p)) v.push_back("paths.gold: " + p.string() + " does not exist");
      }
    }
  }
  return v;
}

std::vector<std::size_t> parse_count_list(std::string_view text) {
  const auto items = split_list(text);
  std::vector<std::size_t> out;
  auto number = [&](const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("bad count '" + s + "' in list '" + std::string(text) + "'");
    }
    return static_cast<std::size_t>(std::stoull(s));
  };
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i] != "...") {
      out.push_back(number(items[i]));
      continue;
    }
    if (out.size() < 2 || i + 1 >= items.size()) {
      throw ConfigError("'...' needs two leading values and an end value in '" + std::string(text) + "'");
    }
    const auto a = out[out.size() - 2], b = out.back(), end = number(items[++i]);
    if (b <= a || end < b) throw ConfigError("'...' needs an increasing progression in '" + std::string(text) + "'");
    for (auto k = b + (b - a); k <= end; k += b - a) out.push_back(k);
    if (out.back() != end) throw ConfigError("end value does not lie on the progression in '" + std::string(text) + "'");
  }
  if (out.empty()) throw ConfigError("empty count list");
  return out;
}

int run_subcommand(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_subcommand(args, std::cout, std::cerr);
}

int run_subcommand(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Session s(out, err);
  CLI::App app{"Synthetic labeled text generation for low-resource languages", "synthgen"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.add_option("--config", s.g.config_path, "Pipeline config file (JSON, ${ENV} interpolation)");
  app.add_flag("--log-json", s.g.log_json, "Log to stderr as line-delimited JSON");
  app.add_option("--log-level", s.g.log_level, "trace, debug, info, warn, error or off");
  std::string seed_text;
  app.add_option("--seed", seed_text, "Seed for every random choice");
  app.add_option("--jobs", s.g.jobs, "Grid cells run concurrently")->check(CLI::PositiveNumber);
  app.add_flag("--allow-any-language", s.g.allow_any_language, "Accept languages outside the evaluation set");

  // Shared cell flags.
  struct CellFlags {
    std::string task, lang, strategy, backend = "sim", run_root, gold, templates, sim_script;
    std::size_t per_label = 0, demos_k = 0, max_rounds = 0;
  };
  auto add_cell_flags = [](CLI::App* cmd, CellFlags& f, bool with_strategy) {
    cmd->add_option("--task", f.task, "intent, topic or sentiment (comma list allowed)");
    cmd->add_option("--lang", f.lang, "Target language code (comma list allowed)");
    if (with_strategy) cmd->add_option("--strategy", f.strategy, "Strategy name (comma list allowed)");
    cmd->add_option("--backend", f.backend, "Model name from the config, or sim");
    cmd->add_option("--run-root", f.run_root, "Directory holding run directories");
    cmd->add_option("--gold", f.gold, "Gold file pattern with {task} and {lang}");
    cmd->add_option("--templates", f.templates, "Prompt template directory");
    cmd->add_option("--sim-script", f.sim_script, "Script for the simulated backend");
  };
  auto apply_cell_flags = [&](const CellFlags& f) {
    if (!f.run_root.empty()) s.cfg.run_root = f.run_root;
    if (!f.gold.empty()) s.cfg.gold_pattern = f.gold;
    if (!f.templates.empty()) s.cfg.templates = f.templates;
    if (f.per_label) s.cfg.generation.per_label = f.per_label;
    if (f.demos_k) s.cfg.generation.demos_k = f.demos_k;
    if (f.max_rounds) s.cfg.generation.max_generation_rounds = f.max_rounds;
    if (!f.task.empty()) {
      s.cfg.tasks.clear();
      for (const auto& t : split_list(f.task)) s.cfg.tasks.push_back(parse_task(t));
    }
    if (!f.lang.empty()) s.cfg.languages = split_list(f.lang);
    if (!f.strategy.empty()) {
      s.cfg.strategies.clear();
      for (const auto& t : split_list(f.strategy)) s.cfg.strategies.push_back(parse_strategy(t));
    }
    for (const auto& lang : s.cfg.languages) check_language(s, lang);
  };
  auto sim_override = [](const CellFlags& f) {
    return f.sim_script.empty() ? std::nullopt : std::optional<fs::path>(f.sim_script);
  };

  // summarize-labels
  CellFlags sum_flags;
  auto* summarize = app.add_subcommand("summarize-labels", "Describe each label from English gold examples");
  add_cell_flags(summarize, sum_flags, false);
  std::size_t summary_k = 10;
  summarize->add_option("--k", summary_k, "English examples per summary")->check(CLI::PositiveNumber);

  // generate
  CellFlags gen_flags;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic corpus for each grid cell");
  add_cell_flags(generate, gen_flags, true);
  generate->add_option("--per-label", gen_flags.per_label, "Samples kept per label (0: config value)");
  generate->add_option("--demos-k", gen_flags.demos_k, "Demonstrations per prompt (0: config value)");
  generate->add_option("--max-rounds", gen_flags.max_rounds,
                       "Generation rounds per label before giving up (0: config value)");

  // revise
  CellFlags rev_flags;
  std::string rev_input, rev_out;
  std::size_t rev_batch = 10;
  bool rev_fail_closed = false;
  auto* revise = app.add_subcommand("revise", "Judge samples of a corpus file and split accepted from rejected");
  add_cell_flags(revise, rev_flags, false);
  revise->add_option("--input", rev_input, "Corpus JSONL to judge")->required();
  revise->add_option("--out", rev_out, "Output directory")->required();
  revise->add_option("--batch", rev_batch, "Samples per judge call")->check(CLI::PositiveNumber);
  revise->add_flag("--fail-closed", rev_fail_closed, "Reject samples the judge gave no verdict for");

  // evaluate
  CellFlags eval_flags;
  std::string eval_run, eval_samples, eval_embed, eval_trainer, eval_out;
  bool eval_gold_only = false;
  auto* evaluate = app.add_subcommand("evaluate", "Compute similarity, diversity and F1 metrics for a run");
  add_cell_flags(evaluate, eval_flags, false);
  evaluate->add_option("--run", eval_run, "Run id");
  evaluate->add_option("--samples", eval_samples, "Corpus JSONL instead of a run (needs --task and --lang)");
  evaluate->add_flag("--gold-only", eval_gold_only, "Report n-gram diversity of the gold train split only");
  evaluate->add_option("--embed-backend", eval_embed, "Backend for embedding similarity");
  evaluate->add_option("--trainer-result", eval_trainer, "Trainer result JSON with per-seed F1");
  evaluate->add_option("--out", eval_out, "Metric report path (default: <run dir>/metrics.json)");

  // report
  CellFlags rep_flags;
  std::vector<std::string> rep_results, rep_trainer;
  std::string rep_group = "language", rep_format = "markdown", rep_out, rep_chart = "none", rep_chart_out;
  bool rep_from_runs = false, rep_diff = false;
  auto* report = app.add_subcommand("report", "Render results tables, gaps to gold and chart data");
  report->add_option("--task", rep_flags.task, "Task to tabulate")->required();
  report->add_option("--run-root", rep_flags.run_root, "Directory holding run directories");
  report->add_option("--results", rep_results, "Results CSV (task,language,model,strategy,f1[,ci_low,ci_high])");
  report->add_option("--trainer-result", rep_trainer, "task,lang,model,strategy=path of a trainer result JSON");
  report->add_flag("--from-runs", rep_from_runs, "Include metrics.json of every run under the run root");
  report->add_option("--group-by", rep_group, "language or model");
  report->add_option("--format", rep_format, "markdown or csv");
  report->add_option("--out", rep_out, "Write the table here instead of stdout");
  report->add_flag("--diff", rep_diff, "Append mean gap to gold per strategy");
  report->add_option("--chart", rep_chart, "none or diff_bars");
  report->add_option("--chart-out", rep_chart_out, "Chart path prefix (writes .csv and .svg)");

  // export-training
  CellFlags exp_flags;
  std::string exp_run, exp_out;
  double exp_dev = 0.1;
  auto* export_cmd = app.add_subcommand("export-training", "Normalize a run and write train/dev (and gold test) splits");
  export_cmd->add_option("--run", exp_run, "Run id")->required();
  export_cmd->add_option("--out", exp_out, "Output directory")->required();
  export_cmd->add_option("--dev-fraction", exp_dev, "Share of each label held out for dev")
      ->check(CLI::Range(0.0, 0.9));
  export_cmd->add_option("--run-root", exp_flags.run_root, "Directory holding run directories");
  export_cmd->add_option("--gold", exp_flags.gold, "Gold file pattern; writes test.jsonl from its test split");

  // sweep-seeds
  CellFlags sw_flags;
  std::string sw_k = "10,20,...,100", sw_seeds, sw_out, sw_score = "f1";
  auto* sweep = app.add_subcommand("sweep-seeds", "Generate and export per sample count k, then chart the sweep");
  add_cell_flags(sweep, sw_flags, true);
  sweep->add_option("--k", sw_k, "Samples per label, e.g. 10,20,...,100");
  sweep->add_option("--seeds", sw_seeds, "Comma list of seeds (default: config seeds or --seed)");
  sweep->add_option("--out", sw_out, "Sweep output directory")->required();
  sweep->add_option("--score", sw_score, "f1 (trainer results), tfidf or ngram");

  // serve-sim
  std::string serve_host = "127.0.0.1", serve_script;
  int serve_port = 8000;
  auto* serve = app.add_subcommand("serve-sim", "Serve the simulated backend over HTTP");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Port (0 picks a free one)");
  serve->add_option("--sim-script", serve_script, "Script for the simulated backend");

  // validate-config
  auto* validate = app.add_subcommand("validate-config", "Check a config file and list every violation");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    s.log = make_logger(err, s.g.log_json, s.g.log_level);
    if (!seed_text.empty()) s.g.seed = parse_seed(seed_text);

    if (*validate) {
      require(!s.g.config_path.empty(), "validate-config needs --config");
      std::vector<std::string> violations;
      s.cfg = load_pipeline_config(s.g.config_path, violations);
      for (auto& v : validate_pipeline_config(s.cfg, s.g.allow_any_language)) {
        if (std::find(violations.begin(), violations.end(), v) == violations.end()) violations.push_back(v);
      }
      if (!violations.empty()) {
        err << "config " << s.g.config_path << " has " << violations.size() << " violation(s):\n";
        for (const auto& v : violations) err << "  " << v << "\n";
        return kExitConfig;
      }
      out << "config ok\n";
      return kExitOk;
    }

    load_config(s);
    if (s.g.seed) s.cfg.seeds = {*s.g.seed};

    if (*serve) {
      SimScript script = serve_script.empty() ? default_sim_script(s.seed()) : SimScript::load(serve_script);
      SimServer server(std::move(script));
      SignalGuard signals;
      const int port = server.start(serve_host, serve_port);
      out << "serving simulated backend on http://" << serve_host << ":" << port << "\n" << std::flush;
      while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      return kExitOk;
    }

    if (*summarize) {
      apply_cell_flags(sum_flags);
      auto backend = s.backend(s.cfg.summary_model.empty() ? sum_flags.backend : s.cfg.summary_model,
                               sim_override(sum_flags));
      const auto templates = s.templates();
      for (auto task : s.cfg.tasks) {
        const auto english = *load_gold(s, task, "en", true);
        for (const auto& name : english.label_names()) {
          const auto spec = summarize_label(name, train_split(english), *backend, summary_k, &s.summary_cache(),
                                            templates);
          out << to_string(task) << "\t" << name << "\t" << *spec.summary << "\n";
        }
      }
      return kExitOk;
    }

    if (*generate) {
      apply_cell_flags(gen_flags);
      require(!s.cfg.languages.empty(), "generate needs --lang or config languages");
      require(!s.cfg.strategies.empty(), "generate needs --strategy or config strategies");
      std::vector<std::string> models;
      if (generate->count("--backend") || s.cfg.models.empty()) {
        models = split_list(gen_flags.backend);
      } else {
        for (const auto& m : s.cfg.models) models.push_back(m.name);
      }
      std::vector<CellSpec> cells;
      for (auto task : s.cfg.tasks)
        for (const auto& lang : s.cfg.languages)
          for (const auto& model : models)
            for (auto kind : s.cfg.strategies)
              for (auto seed : s.cfg.seeds) cells.push_back({task, lang, model, kind, seed});

      s.summary_cache();
      SignalGuard signals;
      std::vector<CellOutcome> outcomes(cells.size());
      CellOverrides ov{sim_override(gen_flags), std::nullopt};
      parallel_for(cells.size(), s.g.jobs, [&](std::size_t i) {
        try {
          outcomes[i] = run_cell(s, cells[i], ov);
        } catch (const ConfigError& ex) {
          outcomes[i].error = ex.what();
          outcomes[i].config_error = true;
        } catch (const std::exception& ex) {
          outcomes[i].error = ex.what();
        }
      });
      int code = kExitOk;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& o = outcomes[i];
        out << to_string(o.status) << "\t" << o.run_id << "\t" << o.dir.string() << "\n";
        if (!o.error.empty()) {
          s.log->error("{} {}/{} {}: {}", cli_name(cells[i].strategy), to_string(cells[i].task), cells[i].language,
                       cells[i].model, o.error);
          code = std::max(code, o.config_error ? kExitConfig : kExitFailure);
        }
      }
      return code;
    }

    if (*revise) {
      apply_cell_flags(rev_flags);
      require(s.cfg.tasks.size() == 1 && s.cfg.languages.size() == 1, "revise needs one --task and one --lang");
      const auto task = s.cfg.tasks.front();
      const auto lang = s.cfg.languages.front();
      const auto input = load_corpus(rev_input, task);
      auto judge = s.backend(s.cfg.judge_model.empty() ? rev_flags.backend : s.cfg.judge_model, sim_override(rev_flags));
      fs::create_directories(rev_out);
      auto transcript = std::make_shared<Transcript>(fs::path(rev_out) / kTranscriptFile);
      judge->set_transcript(transcript);
      const auto templates = s.templates();
      std::optional<Dataset> english;
      std::vector<LabeledExample> accepted, rejected;
      std::string verdict_lines;
      std::size_t n_rejected = 0, n_judged = 0;
      for (const auto& name : input.label_names()) {
        LabelSpec spec{name, s.summary_cache().get(task, name)};
        if (!spec.summary) {
          if (!english) english = train_split(*load_gold(s, task, "en", true));
          spec = summarize_label(name, *english, *judge, 10, &s.summary_cache(), templates);
        }
        const auto samples = input.select(name);
        const auto verdicts = revise_batch(samples, spec, *judge, rev_batch, {task, lang},
                                           rev_fail_closed ? FailMode::kClosed : FailMode::kOpen, templates);
        for (std::size_t i = 0; i < samples.size(); ++i) {
          auto e = samples[i];
          if (verdicts[i].accepted) {
            accepted.push_back(std::move(e));
          } else {
            e.meta["revision_reason"] = verdicts[i].reason;
            rejected.push_back(std::move(e));
            ++n_rejected;
          }
          ++n_judged;
          verdict_lines += to_json(verdicts[i]).dump() + "\n";
        }
      }
      write_jsonl(fs::path(rev_out) / "accepted.jsonl", accepted);
      write_jsonl(fs::path(rev_out) / "rejected.jsonl", rejected);
      write_file_atomic(fs::path(rev_out) / kVerdictsFile, verdict_lines);
      out << "judged " << n_judged << ", rejected " << n_rejected << " ("
          << fixed(n_judged ? static_cast<double>(n_rejected) / n_judged : 0.0, 4) << ")\n";
      return kExitOk;
    }

    if (*evaluate) {
      apply_cell_flags(eval_flags);
      MetricReport report;
      report.metric_config = s.cfg.metrics.to_json();
      Dataset generated;
      fs::path default_out;
      if (!eval_run.empty()) {
        const RunStore store(s.cfg.run_root);
        const auto run = store.load_run(eval_run);
        generated = run.corpus();
        report.run_id = run.run_id;
        default_out = store.run_dir(run) / "metrics.json";
        if (traits(run.strategy.kind).revision) report.rejection_rate = rejection_stats(run).total;
      } else {
        require(s.cfg.tasks.size() == 1 && s.cfg.languages.size() == 1, "evaluate needs --run, or one --task and --lang");
        if (!eval_gold_only) {
          require(!eval_samples.empty(), "evaluate needs --run, --samples or --gold-only");
          generated = load_corpus(eval_samples, s.cfg.tasks.front());
          generated.language = s.cfg.languages.front();
        }
      }
      const auto task = eval_run.empty() ? s.cfg.tasks.front() : generated.task;
      const auto lang = eval_run.empty() ? s.cfg.languages.front() : generated.language;
      const auto gold = load_gold(s, task, lang, eval_gold_only);
      if (eval_gold_only) {
        std::vector<std::string> texts;
        for (const auto& e : train_split(*gold).examples) texts.push_back(e.text);
        out << "ngram_div " << fixed(ngram_diversity(texts, s.cfg.metrics.ngram_max), 6) << "\n";
        return kExitOk;
      }
      std::vector<std::string> texts;
      for (const auto& e : generated.examples) texts.push_back(e.text);
      report.ngram_div = ngram_diversity(texts, s.cfg.metrics.ngram_max);
      if (gold) {
        const auto gold_train = train_split(*gold);
        report.tfidf_sim = tfidf_cosine_to_gold(generated, gold_train, s.cfg.metrics);
        if (!eval_embed.empty()) {
          auto backend = s.backend(eval_embed, std::nullopt);
          report.embed_sim = embedding_cosine_to_gold(generated, gold_train, *backend, s.cfg.metrics);
        }
      } else {
        s.log->warn("no gold data for {}/{}; similarity metrics skipped", to_string(task), lang);
      }
      if (lang == "th") s.log->warn("n-gram diversity uses whitespace tokens; Thai text is mostly unsegmented");
      if (!eval_trainer.empty()) {
        const auto tr = report_from_trainer_result(nlohmann::json::parse(read_file(eval_trainer)));
        report.per_seed_f1 = tr.per_seed_f1;
        report.f1_mean = tr.f1_mean;
        report.f1_ci_low = tr.f1_ci_low;
        report.f1_ci_high = tr.f1_ci_high;
        if (tr.per_seed_f1.size() > 1) report.set_seed_scores(tr.per_seed_f1, s.cfg.metrics.ci_level);
      }
      const fs::path dest = eval_out.empty() ? default_out : fs::path(eval_out);
      const auto text = report.to_json_string() + "\n";
      if (dest.empty()) {
        out << text;
      } else {
        write_file_atomic(dest, text);
        out << text;
      }
      return kExitOk;
    }

    if (*report) {
      if (!rep_flags.run_root.empty()) s.cfg.run_root = rep_flags.run_root;
      const auto task = parse_task(rep_flags.task);
      ResultsGrid grid;
      for (const auto& path : rep_results) {
        const auto loaded = ResultsGrid::load_csv(path);
        for (const auto& [k, r] : loaded.cells()) grid.add(k, r);
      }
      for (const auto& spec : rep_trainer) {
        const auto eq = spec.find('=');
        const auto parts = split_list(spec.substr(0, eq == std::string::npos ? 0 : eq));
        require(eq != std::string::npos && parts.size() == 4,
                "--trainer-result expects task,lang,model,strategy=path, got '" + spec + "'");
        grid.load_trainer_result({parse_task(parts[0]), parts[1], parts[2], parts[3]}, spec.substr(eq + 1));
      }
      if (rep_from_runs) {
        const RunStore store(s.cfg.run_root);
        for (const auto& id : store.list_runs()) {
          const auto dir = *store.find_run(id);
          if (!fs::exists(dir / "metrics.json")) continue;
          const auto m = store.load_manifest(id).body;
          grid.add({parse_task(m.at("task").get<std::string>()), m.at("language").get<std::string>(),
                    m.at("model").get<std::string>(), m.at("strategy").at("kind").get<std::string>()},
                   MetricReport::from_json(nlohmann::json::parse(read_file(dir / "metrics.json"))));
        }
      }
      for (const auto& problem : grid.validate()) s.log->warn("{}", problem);
      const auto table = results_table(grid, task, parse_dimension(rep_group));
      for (const auto& w : table.warnings) s.log->warn("{}", w);
      std::string text;
      if (rep_format == "markdown") {
        text = table.to_markdown();
      } else if (rep_format == "csv") {
        text = table.to_csv();
      } else {
        throw ConfigError("--format must be markdown or csv");
      }
      if (rep_diff) {
        DiffScope scope;
        scope.tasks = {task};
        const auto diff = diff_to_gold(grid, scope);
        text += "\nGap to gold (percentage points, lower is better):\n";
        for (const auto& d : diff.strategies) {
          text += "  " + d.strategy + " " + fixed(d.mean, 2) + (d.strategy == diff.best ? " best" : "") +
                  (d.strategy == diff.second ? " second" : "") + "\n";
        }
      }
      if (rep_out.empty()) {
        out << text;
      } else {
        write_file_atomic(rep_out, text);
      }
      if (rep_chart != "none") {
        require(!rep_chart_out.empty(), "--chart needs --chart-out");
        const auto kind = parse_chart_kind(rep_chart);
        require(kind == ChartKind::kDiffBars, "report draws diff_bars; seed sweeps come from sweep-seeds");
        const auto files = emit_chart_data(diff_bar_points(grid, task, parse_dimension(rep_group)), kind, rep_chart_out);
        s.log->info("wrote {} and {}", files.csv.string(), files.svg.string());
      }
      return kExitOk;
    }

    if (*export_cmd) {
      if (!exp_flags.run_root.empty()) s.cfg.run_root = exp_flags.run_root;
      if (!exp_flags.gold.empty()) s.cfg.gold_pattern = exp_flags.gold;
      const RunStore store(s.cfg.run_root);
      const auto run = store.load_run(exp_run);
      auto pool = run.corpus();
      std::size_t dropped = 0;
      std::vector<LabeledExample> kept;
      for (auto e : pool.examples) {
        e.text = normalize_for_training(e.text);
        if (e.text.empty()) {
          ++dropped;
          continue;
        }
        kept.push_back(std::move(e));
      }
      if (dropped) s.log->warn("{} samples were empty after normalization and were dropped", dropped);
      pool.examples = std::move(kept);
      auto split = split_train_dev(pool, exp_dev, s.seed());
      for (auto& e : split.dev.examples) e.split = Split::kDev;
      const fs::path dir(exp_out);
      fs::create_directories(dir);
      write_jsonl(dir / "train.jsonl", split.train.examples);
      write_jsonl(dir / "dev.jsonl", split.dev.examples);
      std::size_t n_test = 0;
      if (const auto gold = load_gold(s, run.task, run.language, false)) {
        std::vector<LabeledExample> test;
        for (auto e : gold->examples) {
          if (e.split != Split::kTest) continue;
          e.text = normalize_for_training(e.text);
          if (!e.text.empty()) test.push_back(std::move(e));
        }
        write_jsonl(dir / "test.jsonl", test);
        n_test = test.size();
      }
      out << "train " << split.train.examples.size() << ", dev " << split.dev.examples.size() << ", test " << n_test
          << " -> " << dir.string() << "\n";
      return kExitOk;
    }

    if (*sweep) {
      apply_cell_flags(sw_flags);
      require(s.cfg.tasks.size() == 1 && s.cfg.languages.size() == 1, "sweep-seeds needs one --task and one --lang");
      require(!s.cfg.strategies.empty(), "sweep-seeds needs --strategy");
      require(sw_score == "f1" || sw_score == "tfidf" || sw_score == "ngram", "--score must be f1, tfidf or ngram");
      const auto ks = parse_count_list(sw_k);
      if (!sw_seeds.empty()) {
        s.cfg.seeds.clear();
        for (const auto& t : split_list(sw_seeds)) s.cfg.seeds.push_back(parse_seed(t));
      }
      const auto task = s.cfg.tasks.front();
      const auto lang = s.cfg.languages.front();
      const auto gold = load_gold(s, task, lang, sw_score != "f1");
      const fs::path root(sw_out);
      SignalGuard signals;
      std::vector<SweepResult> results;
      std::vector<std::string> missing;
      int code = kExitOk;
      const RunStore store(s.cfg.run_root);
      for (auto kind : s.cfg.strategies) {
        for (auto k : ks) {
          SweepResult point{std::string(cli_name(kind)), k, {}};
          for (auto seed : s.cfg.seeds) {
            const auto outcome = run_cell(s, {task, lang, sw_flags.backend, kind, seed},
                                          {sim_override(sw_flags), k});
            if (!outcome.error.empty()) {
              s.log->error("k={} seed={}: {}", k, seed, outcome.error);
              code = outcome.config_error ? kExitConfig : kExitFailure;
              continue;
            }
            const auto run = store.load_run(outcome.run_id);
            const auto dir = root / cli_name(kind) / ("k" + std::to_string(k)) / ("seed" + std::to_string(seed));
            fs::create_directories(dir);
            auto pool = run.corpus();
            for (auto& e : pool.examples) e.text = normalize_for_training(e.text);
            std::erase_if(pool.examples, [](const LabeledExample& e) { return e.text.empty(); });
            const auto split = split_train_dev(pool, 0.1, seed);
            write_jsonl(dir / "train.jsonl", split.train.examples);
            write_jsonl(dir / "dev.jsonl", split.dev.examples);
            if (sw_score == "f1") {
              const auto result = dir / "result.json";
              if (fs::exists(result)) {
                point.scores.push_back(report_from_trainer_result(nlohmann::json::parse(read_file(result))).f1_mean);
              } else {
                missing.push_back(result.string());
              }
            } else if (sw_score == "tfidf") {
              point.scores.push_back(tfidf_cosine_to_gold(run.corpus(), train_split(*gold), s.cfg.metrics));
            } else {
              std::vector<std::string> texts;
              for (const auto& e : run.samples) texts.push_back(e.text);
              point.scores.push_back(ngram_diversity(texts, s.cfg.metrics.ngram_max) / 100.0);
            }
          }
          if (!point.scores.empty()) results.push_back(std::move(point));
        }
      }
      if (gold) {
        for (auto k : ks) {
          const auto dir = root / "gold" / ("k" + std::to_string(k));
          fs::create_directories(dir);
          auto balanced = assemble_balanced(train_split(*gold), k).dataset;
          for (auto& e : balanced.examples) e.text = normalize_for_training(e.text);
          write_jsonl(dir / "train.jsonl", balanced.examples);
        }
      }
      if (!missing.empty()) {
        out << "runs and exports are ready; chart needs " << missing.size() << " trainer result(s), e.g. "
            << missing.front() << "\n";
        return code;
      }
      if (!results.empty()) {
        const auto files = emit_chart_data(seed_sweep_points(results, s.cfg.metrics.ci_level), ChartKind::kSeedSweep,
                                           root / "seed_sweep");
        out << "wrote " << files.csv.string() << " and " << files.svg.string() << "\n";
      }
      return code;
    }
  } catch (const ConfigError& ex) {
    if (s.log) {
      s.log->error("{}", ex.what());
    } else {
      err << "error: " << ex.what() << "\n";
    }
    return kExitConfig;
  } catch (const std::exception& ex) {
    if (s.log) {
      s.log->error("{}", ex.what());
    } else {
      err << "error: " << ex.what() << "\n";
    }
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace synthgen
