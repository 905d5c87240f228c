#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "synthgen/backend.hpp"

namespace synthgen {

/// Scripted behaviour of the simulated model for one (language, task) cell.
struct SimBehavior {
  double accept_probability = 1.0;
  /// Placeholders: {label}, {word}, {num}, {lang}. Empty means a built-in
  /// template.
  std::vector<std::string> sample_templates;
  double duplicate_rate = 0.0;
  double off_language_rate = 0.0;
};

struct SimScript {
  std::uint64_t seed = 0;
  /// Keyed by (language, task). "*" in either position acts as a wildcard.
  std::map<std::pair<std::string, std::string>, SimBehavior> behaviors;

  /// Exact match first, then (lang, *), (*, task), (*, *). Throws
  /// ConfigError if nothing covers the key.
  const SimBehavior& behavior(const std::string& language, const std::string& task) const;
  void validate() const;

  static SimScript from_json(const nlohmann::json& j);
  static SimScript load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Lines produced for off-language samples start with this tag; the
/// simulated judge always rejects them.
inline constexpr std::string_view kOffLanguageTag = "(off-language)";

/// Pure function of (messages, script): generation prompts get a numbered
/// list, revision prompts one verdict per index, summary prompts a single
/// paragraph.
std::string sim_respond(std::span<const ChatMessage> messages, const SimScript& script);

/// Deterministic feature-hashed bag-of-words embedding, L2-normalized.
std::vector<double> sim_embedding(std::string_view text, std::size_t dim = 64);

class SimBackend final : public Backend {
 public:
  SimBackend(SimScript script, std::string model_id, int parallelism = 4)
      : script_(std::move(script)), model_id_(std::move(model_id)), parallelism_(parallelism) {}

  ChatResult chat(std::span<const ChatMessage> messages) override;
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;
  std::string model_id() const override { return model_id_; }
  int parallelism() const override { return parallelism_; }
  const SimScript& script() const { return script_; }

 private:
  SimScript script_;
  std::string model_id_;
  int parallelism_;
};

/// Serves the simulated backend over the OpenAI-compatible routes.
class SimServer {
 public:
  explicit SimServer(SimScript script, std::size_t embedding_dim = 64);
  ~SimServer();
  SimServer(const SimServer&) = delete;
  SimServer& operator=(const SimServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks serving on the calling thread.
  void listen(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace synthgen
