#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "synthgen/strategies.hpp"

namespace synthgen {

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kSamplesFile = "samples.jsonl";
inline constexpr const char* kVerdictsFile = "verdicts.jsonl";
inline constexpr const char* kRejectedFile = "rejected.jsonl";
inline constexpr const char* kTranscriptFile = "transcript.log";
inline constexpr const char* kLockFile = "run.lock";

struct RunManifest {
  std::string run_id;
  std::string created_at;  // UTC, ISO 8601
  RunStatus status = RunStatus::kRunning;
  std::string content_hash;
  std::map<std::string, std::string> file_hashes;  // file name -> sha256
  nlohmann::json body;                             // full manifest document

  static RunManifest from_json(const nlohmann::json& j);
};

/// Exclusive writer lock on a run directory. A lock left by a dead process is
/// taken over.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Flat-file run storage: one directory per run under a root.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  static std::string dir_name(Task task, std::string_view language, std::string_view model, StrategyKind strategy,
                              std::string_view run_id);
  std::filesystem::path run_dir(const GenerationRun& run) const;
  std::filesystem::path run_dir(Task task, std::string_view language, std::string_view model, StrategyKind strategy,
                                std::string_view run_id) const;
  /// Directory of an existing run, looked up by id.
  std::optional<std::filesystem::path> find_run(std::string_view run_id) const;
  std::vector<std::string> list_runs() const;

  /// Writes data files, then the manifest, each atomically. Content that is
  /// already on disk is left untouched.
  RunManifest persist_run(const GenerationRun& run) const;
  /// Loads and verifies every recorded hash.
  GenerationRun load_run(std::string_view run_id) const;
  GenerationRun load_run_dir(const std::filesystem::path& dir) const;
  RunManifest load_manifest(std::string_view run_id) const;
  /// Loads a run that can continue: running, partial or failed.
  GenerationRun resume_run(std::string_view run_id) const;

 private:
  std::filesystem::path root_;
};

/// Summaries keyed by (task, label) in <root>/summaries.json.
class FileSummaryCache : public SummaryCache {
 public:
  explicit FileSummaryCache(std::filesystem::path path);
  std::optional<std::string> get(Task task, const std::string& label) const override;
  void put(Task task, const std::string& label, const std::string& summary) override;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> entries_;
};

}  // namespace synthgen
