#include "synthgen/store.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "synthgen/error.hpp"
#include "synthgen/fsutil.hpp"
#include "synthgen/hashing.hpp"

namespace synthgen {
namespace fs = std::filesystem;
namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                      c == '.';
    out.push_back(keep ? c : '-');
  }
  return out.empty() ? "unnamed" : out;
}

nlohmann::json counts_to_json(const LabelCounts& c) {
  return {{"generated", c.generated},   {"accepted", c.accepted},
          {"rejected", c.rejected},     {"duplicates_removed", c.duplicates_removed},
          {"rounds", c.rounds},         {"judge_calls", c.judge_calls}};
}

LabelCounts counts_from_json(const nlohmann::json& j) {
  LabelCounts c;
  c.generated = j.at("generated").get<std::size_t>();
  c.accepted = j.at("accepted").get<std::size_t>();
  c.rejected = j.at("rejected").get<std::size_t>();
  c.duplicates_removed = j.at("duplicates_removed").get<std::size_t>();
  c.rounds = j.at("rounds").get<std::size_t>();
  c.judge_calls = j.at("judge_calls").get<std::size_t>();
  return c;
}

std::string verdicts_jsonl(const std::vector<RevisionVerdict>& verdicts) {
  std::string out;
  for (const auto& v : verdicts) out += to_json(v).dump() + "\n";
  return out;
}

void write_if_changed(const fs::path& path, const std::string& content, const std::string& hash) {
  if (fs::exists(path) && sha256_file(path) == hash) return;
  write_file_atomic(path, content);
}

bool process_alive(long pid) { return pid > 0 && (::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM); }

}  // namespace

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.created_at = j.value("created_at", std::string());
    m.status = parse_run_status(j.at("status").get<std::string>());
    m.content_hash = j.at("content_hash").get<std::string>();
    m.file_hashes = j.at("files").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& ex) {
    throw StoreError(std::string("bad manifest: ") + ex.what());
  }
  m.body = j;
  return m;
}

RunLock::RunLock(const fs::path& dir) : path_(dir / kLockFile) {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
    if (fd >= 0) {
      const auto pid = std::to_string(::getpid()) + "\n";
      const auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      if (written != static_cast<ssize_t>(pid.size())) throw StoreError("cannot write lock " + path_.string());
      return;
    }
    if (errno != EEXIST) throw StoreError("cannot create lock " + path_.string());
    long holder = 0;
    std::ifstream(path_) >> holder;
    if (process_alive(holder)) {
      throw StoreError("run directory " + dir.string() + " is locked by process " + std::to_string(holder));
    }
    fs::remove(path_);
  }
  throw StoreError("cannot acquire lock " + path_.string());
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

RunStore::RunStore(fs::path root) : root_(std::move(root)) {}

std::string RunStore::dir_name(Task task, std::string_view language, std::string_view model, StrategyKind strategy,
                               std::string_view run_id) {
  return std::string(to_string(task)) + "_" + sanitize(language) + "_" + sanitize(model) + "_" +
         std::string(cli_name(strategy)) + "_" + std::string(run_id);
}

fs::path RunStore::run_dir(Task task, std::string_view language, std::string_view model, StrategyKind strategy,
                           std::string_view run_id) const {
  return root_ / dir_name(task, language, model, strategy, run_id);
}

fs::path RunStore::run_dir(const GenerationRun& run) const {
  return run_dir(run.task, run.language, run.model_id, run.strategy.kind, run.run_id);
}

std::optional<fs::path> RunStore::find_run(std::string_view run_id) const {
  if (!fs::is_directory(root_)) return std::nullopt;
  const auto suffix = "_" + std::string(run_id);
  for (const auto& entry : fs::directory_iterator(root_)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.size() > suffix.size() && name.ends_with(suffix)) return entry.path();
  }
  return std::nullopt;
}

std::vector<std::string> RunStore::list_runs() const {
  std::vector<std::string> ids;
  if (!fs::is_directory(root_)) return ids;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / kManifestFile)) continue;
    const auto name = entry.path().filename().string();
    ids.push_back(name.substr(name.rfind('_') + 1));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

RunManifest RunStore::persist_run(const GenerationRun& run) const {
  const auto dir = run_dir(run);
  fs::create_directories(dir);
  const auto manifest_path = dir / kManifestFile;

  std::string created_at = utc_now();
  if (fs::exists(manifest_path)) {
    const auto prior = nlohmann::json::parse(read_file(manifest_path), nullptr, false);
    if (prior.is_object() && prior.value("run_id", std::string()) != run.run_id) {
      throw StoreError(manifest_path.string() + " belongs to another run");
    }
    if (prior.is_object()) created_at = prior.value("created_at", created_at);
  }

  const std::map<std::string, std::string> files{{kSamplesFile, to_jsonl(run.samples)},
                                                 {kVerdictsFile, verdicts_jsonl(run.verdicts)},
                                                 {kRejectedFile, to_jsonl(run.rejected)}};
  std::map<std::string, std::string> hashes;
  for (const auto& [name, content] : files) {
    hashes[name] = sha256_hex(content);
    write_if_changed(dir / name, content, hashes[name]);
  }
  if (!fs::exists(dir / kTranscriptFile)) write_file_atomic(dir / kTranscriptFile, "");

  nlohmann::json labels = nlohmann::json::array();
  for (const auto& l : run.labels) {
    labels.push_back({{"name", l.name}, {"summary", l.summary ? nlohmann::json(*l.summary) : nlohmann::json()}});
  }
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [label, c] : run.counts) counts[label] = counts_to_json(c);

  nlohmann::json body = {{"schema_version", 1},
                         {"run_id", run.run_id},
                         {"created_at", created_at},
                         {"status", to_string(run.status)},
                         {"task", to_string(run.task)},
                         {"language", run.language},
                         {"model", run.model_id},
                         {"strategy", run.strategy.to_json()},
                         {"config", run.config_snapshot},
                         {"labels", labels},
                         {"counts", counts},
                         {"shortfalls", run.shortfalls},
                         {"content_hash", run.content_hash()},
                         {"files", hashes}};
  const auto text = body.dump(2) + "\n";
  write_if_changed(manifest_path, text, sha256_hex(text));
  return RunManifest::from_json(body);
}

RunManifest RunStore::load_manifest(std::string_view run_id) const {
  const auto dir = find_run(run_id);
  if (!dir) throw StoreError("no run with id " + std::string(run_id) + " under " + root_.string());
  const auto path = *dir / kManifestFile;
  if (!fs::exists(path)) throw StoreError("missing " + path.string());
  const auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw StoreError("corrupt manifest " + path.string());
  return RunManifest::from_json(j);
}

GenerationRun RunStore::load_run_dir(const fs::path& dir) const {
  const auto manifest_path = dir / kManifestFile;
  if (!fs::exists(manifest_path)) throw StoreError("missing " + manifest_path.string());
  const auto j = nlohmann::json::parse(read_file(manifest_path), nullptr, false);
  if (j.is_discarded()) throw StoreError("corrupt manifest " + manifest_path.string());
  const auto m = RunManifest::from_json(j);

  for (const auto& [name, hash] : m.file_hashes) {
    const auto path = dir / name;
    if (!fs::exists(path)) throw StoreError("missing run file " + path.string());
    if (sha256_file(path) != hash) throw StoreError("hash mismatch in " + path.string());
  }

  GenerationRun run;
  try {
    run.run_id = m.run_id;
    run.status = m.status;
    run.task = parse_task(j.at("task").get<std::string>());
    run.language = j.at("language").get<std::string>();
    run.model_id = j.at("model").get<std::string>();
    run.strategy = StrategyConfig::from_json(j.at("strategy"));
    run.config_snapshot = j.at("config");
    for (const auto& l : j.at("labels")) {
      LabelSpec spec{l.at("name").get<std::string>(), std::nullopt};
      if (!l.at("summary").is_null()) spec.summary = l.at("summary").get<std::string>();
      run.labels.push_back(std::move(spec));
    }
    for (const auto& [label, c] : j.at("counts").items()) run.counts[label] = counts_from_json(c);
    run.shortfalls = j.at("shortfalls").get<std::map<std::string, std::size_t>>();
  } catch (const nlohmann::json::exception& ex) {
    throw StoreError(manifest_path.string() + ": " + ex.what());
  } catch (const Error& ex) {
    throw StoreError(manifest_path.string() + ": " + ex.what());
  }
  run.samples = read_jsonl(dir / kSamplesFile);
  if (fs::exists(dir / kRejectedFile)) run.rejected = read_jsonl(dir / kRejectedFile);
  std::istringstream verdicts(read_file(dir / kVerdictsFile));
  std::string line;
  while (std::getline(verdicts, line)) {
    if (line.empty()) continue;
    const auto v = nlohmann::json::parse(line, nullptr, false);
    if (v.is_discarded()) throw StoreError("corrupt line in " + (dir / kVerdictsFile).string());
    run.verdicts.push_back(verdict_from_json(v));
  }
  if (run.content_hash() != m.content_hash) throw StoreError("content hash mismatch for run " + run.run_id);
  return run;
}

GenerationRun RunStore::load_run(std::string_view run_id) const {
  const auto dir = find_run(run_id);
  if (!dir) throw StoreError("no run with id " + std::string(run_id) + " under " + root_.string());
  return load_run_dir(*dir);
}

GenerationRun RunStore::resume_run(std::string_view run_id) const {
  auto run = load_run(run_id);
  if (run.status == RunStatus::kComplete) {
    throw StoreError("run " + run.run_id + " is complete and cannot be resumed");
  }
  return run;
}

FileSummaryCache::FileSummaryCache(fs::path path) : path_(std::move(path)) {
  if (!fs::exists(path_)) return;
  const auto j = nlohmann::json::parse(read_file(path_), nullptr, false);
  if (!j.is_object()) throw StoreError("corrupt summary cache " + path_.string());
  entries_ = j.get<std::map<std::string, std::string>>();
}

std::optional<std::string> FileSummaryCache::get(Task task, const std::string& label) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(std::string(to_string(task)) + "/" + label);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void FileSummaryCache::put(Task task, const std::string& label, const std::string& summary) {
  std::lock_guard lock(mu_);
  entries_[std::string(to_string(task)) + "/" + label] = summary;
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  write_file_atomic(path_, nlohmann::json(entries_).dump(2) + "\n");
}

}  // namespace synthgen
