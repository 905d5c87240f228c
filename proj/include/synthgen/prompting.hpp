#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthgen/corpus.hpp"

namespace synthgen {

struct ChatMessage {
  enum class Role { kSystem, kUser, kAssistant };
  Role role = Role::kUser;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

std::string_view to_string(ChatMessage::Role role);
ChatMessage::Role parse_role(std::string_view name);

struct Demonstration {
  std::string text;
  std::string language;
};

struct PromptContext {
  Task task = Task::kIntent;
  LabelSpec label;
  std::vector<Demonstration> demos;
  std::string target_language;  // ISO-639-1 code
  std::size_t n_requested = 10;
  bool include_summary = false;
  bool require_demos = false;
  /// Varies between generation rounds so repeated requests are distinct.
  std::uint64_t nonce = 0;
};

/// Which of the three prompt families a message list was rendered from,
/// plus the routing fields carried in the system turn. The simulated
/// backend and the transcript use this; real models can ignore it.
struct PromptMarker {
  enum class Kind { kGeneration, kRevision, kSummary };
  Kind kind = Kind::kGeneration;
  std::string task;
  std::string language;
  std::string label;
  std::size_t n = 0;
  std::uint64_t nonce = 0;
};

std::optional<PromptMarker> find_marker(std::span<const ChatMessage> messages);

/// Prompt template set. Placeholders use {{name}} syntax: label, summary,
/// demos, n, language, task, samples.
struct PromptTemplates {
  std::string system;
  std::string generation;
  std::string revision;
  std::string summary;

  static PromptTemplates defaults();
  /// Defaults overridden by system.txt / generation.txt / revision.txt /
  /// summary.txt found in `dir`.
  static PromptTemplates load(const std::filesystem::path& dir);
  /// Short content hash recorded in run manifests.
  std::string version() const;
};

std::vector<ChatMessage> render_generation_prompt(const PromptContext& ctx,
                                                  const PromptTemplates& templates = PromptTemplates::defaults());

struct RevisionTarget {
  Task task = Task::kIntent;
  std::string language;
};

std::vector<ChatMessage> render_revision_prompt(const LabelSpec& label, std::span<const std::string> samples,
                                                const RevisionTarget& target,
                                                const PromptTemplates& templates = PromptTemplates::defaults());

std::vector<ChatMessage> render_summary_prompt(std::string_view label_name, std::span<const std::string> english_demos,
                                               Task task = Task::kIntent,
                                               const PromptTemplates& templates = PromptTemplates::defaults());

/// "1. a\n2. b\n" -- the format generation prompts ask for.
std::string format_numbered_list(std::span<const std::string> items);

struct ResidueLine {
  std::size_t line = 0;  // 1-based
  std::string text;
  std::string reason;
};

struct GenerationParse {
  std::vector<std::string> samples;
  std::vector<ResidueLine> residue;
};

GenerationParse parse_generation_output(std::string_view completion, std::size_t n_expected);

enum class Verdict { kAccept, kReject };

struct ParsedVerdict {
  std::size_t index = 0;  // 1-based
  Verdict verdict = Verdict::kAccept;
  std::string reason;
  bool defaulted = false;  // index absent from the judge output

  bool operator==(const ParsedVerdict&) const = default;
};

struct RevisionParse {
  std::vector<ParsedVerdict> verdicts;  // exactly n_samples entries, index order
  std::vector<std::string> warnings;
};

enum class FailMode { kOpen, kClosed };

RevisionParse parse_revision_output(std::string_view completion, std::size_t n_samples,
                                    FailMode mode = FailMode::kOpen);

}  // namespace synthgen
