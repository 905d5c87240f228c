#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "synthgen/prompting.hpp"

namespace synthgen {

struct BackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model_id;
  /// Model used for /v1/embeddings; falls back to model_id when empty.
  std::string embedding_model;
  double temperature = 1.0;
  double top_p = 0.95;
  int max_tokens = 1024;
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  int parallelism = 4;
  std::optional<std::string> api_key;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds backoff_max{30'000};
  std::size_t embed_batch = 64;
  std::uint64_t jitter_seed = 0;

  /// Throws ConfigError listing the first violated invariant.
  void validate() const;
};

nlohmann::json to_json(const BackendConfig& cfg);  // api_key is never serialized
BackendConfig backend_config_from_json(const nlohmann::json& j);

struct TokenUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
  long total_tokens = 0;
};

struct ChatResult {
  std::string content;
  std::optional<TokenUsage> usage;
};

/// Append-only log of backend traffic, one JSON object per line. Entries get
/// a sequence number and a non-decreasing microsecond timestamp. Thread-safe.
class Transcript {
 public:
  Transcript() = default;
  explicit Transcript(const std::filesystem::path& path);

  void record(nlohmann::json entry);
  std::vector<nlohmann::json> entries() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::ofstream out_;
  std::vector<nlohmann::json> entries_;
  std::int64_t last_us_ = 0;
  std::uint64_t seq_ = 0;
};

nlohmann::json to_json(std::span<const ChatMessage> messages);

class Backend {
 public:
  virtual ~Backend() = default;

  virtual ChatResult chat(std::span<const ChatMessage> messages) = 0;
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
  virtual std::string model_id() const = 0;
  /// Upper bound on useful concurrent callers.
  virtual int parallelism() const { return 1; }

  void set_transcript(std::shared_ptr<Transcript> transcript) { transcript_ = std::move(transcript); }
  const std::shared_ptr<Transcript>& transcript() const { return transcript_; }

 protected:
  std::shared_ptr<Transcript> transcript_;
};

/// Client for OpenAI-compatible /v1/chat/completions and /v1/embeddings.
/// Shareable across threads; at most cfg.parallelism requests are in flight.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig cfg);

  ChatResult chat(std::span<const ChatMessage> messages) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  std::string model_id() const override { return cfg_.model_id; }
  int parallelism() const override { return cfg_.parallelism; }

  const BackendConfig& config() const { return cfg_; }
  std::size_t attempts() const { return attempts_.load(); }
  std::size_t backoffs() const { return backoffs_.load(); }

 private:
  struct Response {
    int status = 0;
    std::string body;
  };

  Response post_with_retries(const std::string& path, const std::string& body, std::string_view kind);
  std::chrono::milliseconds backoff_delay(int attempt);

  BackendConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::counting_semaphore<> in_flight_;
  std::mutex jitter_mu_;
  std::uint64_t jitter_state_;
  std::atomic<std::size_t> attempts_{0};
  std::atomic<std::size_t> backoffs_{0};
};

/// Free-function forms of the two protocol calls.
std::string chat_complete(std::span<const ChatMessage> messages, const BackendConfig& cfg);
std::vector<std::vector<double>> embed(std::span<const std::string> texts, const BackendConfig& cfg);

/// Number of requests embed() issues for n texts.
std::size_t embed_request_count(std::size_t n_texts, std::size_t batch);

}  // namespace synthgen
