#include "synthgen/prompting.hpp"

#include <algorithm>
#include <regex>

#include "synthgen/error.hpp"
#include "synthgen/fsutil.hpp"
#include "synthgen/hashing.hpp"
#include "synthgen/unicode.hpp"

namespace synthgen {
namespace {

constexpr std::string_view kMarkerOpen = "<<synthgen ";
constexpr std::string_view kMarkerClose = ">>";

constexpr std::string_view kDefaultSystem =
    "You are a careful assistant that writes and reviews labeled training data for text classifiers.";

constexpr std::string_view kDefaultGeneration =
    "Generate {{n}} new examples of {{task}} data for the label \"{{label}}\". "
    "Every example must be written in {{language}}.\n"
    "{{summary}}{{demos}}"
    "Write each example as a short, natural text that a person could have written. "
    "Vary the wording, length and details across examples.\n"
    "Output format: a numbered list with one example per line. Each line starts with its number "
    "followed by a period. Do not add explanations, headings or translations.\n";

constexpr std::string_view kDefaultRevision =
    "You are checking automatically generated {{task}} examples for the label \"{{label}}\". "
    "The examples should be written in {{language}}.\n"
    "Label description: {{summary}}\n"
    "Examples to check:\n"
    "{{samples}}"
    "For every example decide whether it is a correct and fluent example of this label in the required "
    "language. Reject examples that are off-topic, only indirectly related to the label, ungrammatical or "
    "written in the wrong language.\n"
    "Answer with exactly one line per example, in the form \"<number>: ACCEPT\" or "
    "\"<number>: REJECT - <one-line reason>\".\n";

constexpr std::string_view kDefaultSummary =
    "Here are {{n}} example texts for the label \"{{label}}\" from a dataset for {{task}}:\n"
    "{{demos}}"
    "Describe in a single paragraph what kind of texts belong to this label. Start the paragraph with "
    "\"This intent involves\" and do not repeat the examples.\n";

std::string_view task_description(Task task) {
  switch (task) {
    case Task::kIntent: return "intent recognition";
    case Task::kTopic: return "topic classification";
    case Task::kSentiment: return "sentiment analysis";
  }
  return "classification";
}

std::string fill(std::string_view tmpl, const std::vector<std::pair<std::string_view, std::string>>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) throw ConfigError("unterminated placeholder in prompt template");
    out.append(tmpl.substr(pos, open - pos));
    const auto name = tmpl.substr(open + 2, close - open - 2);
    auto it = std::find_if(values.begin(), values.end(), [&](const auto& kv) { return kv.first == name; });
    if (it == values.end()) {
      throw ConfigError("prompt template uses unknown placeholder {{" + std::string(name) + "}}");
    }
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

void require_placeholders(std::string_view name, std::string_view tmpl, std::initializer_list<std::string_view> keys) {
  for (auto key : keys) {
    if (tmpl.find("{{" + std::string(key) + "}}") == std::string_view::npos) {
      throw ConfigError(std::string(name) + " template lacks the {{" + std::string(key) + "}} placeholder");
    }
  }
}

std::string marker_line(const PromptMarker& m) {
  static constexpr std::string_view kKinds[] = {"generation", "revision", "summary"};
  nlohmann::json j = {{"kind", kKinds[static_cast<int>(m.kind)]},
                      {"task", m.task},
                      {"language", m.language},
                      {"label", m.label},
                      {"n", m.n},
                      {"nonce", m.nonce}};
  return std::string(kMarkerOpen) + j.dump() + std::string(kMarkerClose);
}

std::vector<ChatMessage> with_system(const PromptTemplates& t, const PromptMarker& marker, std::string user) {
  return {{ChatMessage::Role::kSystem, t.system + "\n\n" + marker_line(marker)},
          {ChatMessage::Role::kUser, std::move(user)}};
}

std::string language_display(std::string_view code) {
  if (auto name = language_name(code)) return std::string(*name);
  return std::string(code);
}

bool is_quote(char32_t c) {
  switch (c) {
    case U'"': case U'\'': case U'`':
    case U'“': case U'”': case U'„': case U'‘': case U'’':
    case U'«': case U'»': case U'「': case U'」':
      return true;
    default:
      return false;
  }
}

std::string strip_quotes(std::string s) {
  for (;;) {
    auto cps = unicode::decode(s);
    if (cps.size() < 2 || !is_quote(cps.front()) || !is_quote(cps.back())) return s;
    s = unicode::trim(unicode::encode(std::u32string_view(cps).substr(1, cps.size() - 2)));
  }
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace

std::string_view to_string(ChatMessage::Role role) {
  switch (role) {
    case ChatMessage::Role::kSystem: return "system";
    case ChatMessage::Role::kUser: return "user";
    case ChatMessage::Role::kAssistant: return "assistant";
  }
  return "user";
}

ChatMessage::Role parse_role(std::string_view name) {
  if (name == "system") return ChatMessage::Role::kSystem;
  if (name == "user") return ChatMessage::Role::kUser;
  if (name == "assistant") return ChatMessage::Role::kAssistant;
  throw DataError("unknown chat role '" + std::string(name) + "'");
}

std::optional<PromptMarker> find_marker(std::span<const ChatMessage> messages) {
  for (const auto& m : messages) {
    const auto open = m.content.rfind(kMarkerOpen);
    if (open == std::string::npos) continue;
    const auto start = open + kMarkerOpen.size();
    const auto close = m.content.find(kMarkerClose, start);
    if (close == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(m.content.substr(start, close - start));
      PromptMarker marker;
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "generation") marker.kind = PromptMarker::Kind::kGeneration;
      else if (kind == "revision") marker.kind = PromptMarker::Kind::kRevision;
      else if (kind == "summary") marker.kind = PromptMarker::Kind::kSummary;
      else continue;
      marker.task = j.at("task").get<std::string>();
      marker.language = j.at("language").get<std::string>();
      marker.label = j.at("label").get<std::string>();
      marker.n = j.at("n").get<std::size_t>();
      marker.nonce = j.at("nonce").get<std::uint64_t>();
      return marker;
    } catch (const nlohmann::json::exception&) {
      continue;
    }
  }
  return std::nullopt;
}

PromptTemplates PromptTemplates::defaults() {
  return {std::string(kDefaultSystem), std::string(kDefaultGeneration), std::string(kDefaultRevision),
          std::string(kDefaultSummary)};
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  auto t = defaults();
  auto override_with = [&](std::string& slot, const char* file) {
    const auto path = dir / file;
    if (!std::filesystem::exists(path)) return;
    slot = read_file(path);
    // Files conventionally end with a newline; the system turn should not.
    if (slot.ends_with('\n') && std::string_view(file) == "system.txt") slot.pop_back();
  };
  override_with(t.system, "system.txt");
  override_with(t.generation, "generation.txt");
  override_with(t.revision, "revision.txt");
  override_with(t.summary, "summary.txt");
  require_placeholders("generation", t.generation, {"label", "summary", "demos", "n", "language"});
  require_placeholders("revision", t.revision, {"label", "summary", "samples"});
  require_placeholders("summary", t.summary, {"label", "demos"});
  return t;
}

std::string PromptTemplates::version() const {
  return sha256_hex(system + '\0' + generation + '\0' + revision + '\0' + summary).substr(0, 12);
}

std::vector<ChatMessage> render_generation_prompt(const PromptContext& ctx, const PromptTemplates& templates) {
  if (ctx.n_requested == 0) throw ConfigError("n_requested must be at least 1");
  if (ctx.include_summary && (!ctx.label.summary || ctx.label.summary->empty())) {
    throw ConfigError("label '" + ctx.label.name + "' has no summary but the strategy includes one");
  }
  if (ctx.require_demos && ctx.demos.empty()) {
    throw ConfigError("strategy requires demonstrations but none were supplied for '" + ctx.label.name + "'");
  }
  for (const auto& d : ctx.demos) {
    if (d.language != ctx.demos.front().language) {
      throw ConfigError("demonstrations must share one language");
    }
  }
  std::string summary = ctx.include_summary ? "Label description: " + *ctx.label.summary + "\n" : "";
  std::string demos;
  if (!ctx.demos.empty()) {
    demos = "Examples of this label:\n";
    for (const auto& d : ctx.demos) demos += "- " + d.text + "\n";
  }
  auto user = fill(templates.generation, {{"label", ctx.label.name},
                                          {"summary", summary},
                                          {"demos", demos},
                                          {"n", std::to_string(ctx.n_requested)},
                                          {"language", language_display(ctx.target_language)},
                                          {"task", std::string(task_description(ctx.task))}});
  PromptMarker marker{PromptMarker::Kind::kGeneration, std::string(to_string(ctx.task)), ctx.target_language,
                      ctx.label.name, ctx.n_requested, ctx.nonce};
  return with_system(templates, marker, std::move(user));
}

std::vector<ChatMessage> render_revision_prompt(const LabelSpec& label, std::span<const std::string> samples,
                                                const RevisionTarget& target, const PromptTemplates& templates) {
  if (samples.empty()) throw ConfigError("revision prompt needs at least one sample");
  if (!label.summary || label.summary->empty()) {
    throw ConfigError("revision of label '" + label.name + "' requires its summary");
  }
  auto user = fill(templates.revision, {{"label", label.name},
                                        {"summary", *label.summary},
                                        {"samples", format_numbered_list(samples)},
                                        {"language", language_display(target.language)},
                                        {"task", std::string(task_description(target.task))},
                                        {"n", std::to_string(samples.size())}});
  PromptMarker marker{PromptMarker::Kind::kRevision, std::string(to_string(target.task)), target.language,
                      label.name, samples.size(), 0};
  return with_system(templates, marker, std::move(user));
}

std::vector<ChatMessage> render_summary_prompt(std::string_view label_name, std::span<const std::string> english_demos,
                                               Task task, const PromptTemplates& templates) {
  if (english_demos.empty()) throw ConfigError("summary prompt needs at least one demonstration");
  std::string demos;
  for (const auto& d : english_demos) demos += "- " + d + "\n";
  auto user = fill(templates.summary, {{"label", std::string(label_name)},
                                       {"demos", demos},
                                       {"n", std::to_string(english_demos.size())},
                                       {"task", std::string(task_description(task))},
                                       {"language", "English"}});
  PromptMarker marker{PromptMarker::Kind::kSummary, std::string(to_string(task)), "en", std::string(label_name),
                      english_demos.size(), 0};
  return with_system(templates, marker, std::move(user));
}

std::string format_numbered_list(std::span<const std::string> items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += std::to_string(i + 1) + ". " + items[i] + "\n";
  }
  return out;
}

GenerationParse parse_generation_output(std::string_view completion, std::size_t n_expected) {
  // Numbered ("1.", "2)", "(3)", "4:") or bulleted ("-", "*", "•") items.
  static const std::regex kMarker(R"(^\s*(?:\(\d{1,4}\)|\d{1,4}\s*[.):\]]|[-*+]|\xE2\x80\xA2|\xC2\xB7|\xE2\x80\xA3)\s*)");
  GenerationParse out;
  const auto lines = split_lines(completion);
  struct Candidate {
    std::size_t line;
    std::string text;
    bool marked;
  };
  std::vector<Candidate> candidates;
  bool any_marked = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& raw = lines[i];
    if (unicode::trim(raw).empty()) continue;
    std::smatch m;
    if (std::regex_search(raw, m, kMarker)) {
      any_marked = true;
      candidates.push_back({i + 1, strip_quotes(unicode::trim(m.suffix().str())), true});
    } else {
      candidates.push_back({i + 1, strip_quotes(unicode::trim(raw)), false});
    }
  }
  for (auto& c : candidates) {
    if (any_marked && !c.marked) {
      out.residue.push_back({c.line, c.text, "commentary"});
    } else if (!any_marked && c.text.ends_with(':')) {
      out.residue.push_back({c.line, c.text, "commentary"});
    } else if (c.text.empty()) {
      out.residue.push_back({c.line, c.text, "empty item"});
    } else if (out.samples.size() >= n_expected) {
      out.residue.push_back({c.line, c.text, "truncated"});
    } else {
      out.samples.push_back(std::move(c.text));
    }
  }
  return out;
}

RevisionParse parse_revision_output(std::string_view completion, std::size_t n_samples, FailMode mode) {
  static const std::regex kLine(
      R"(^\s*(?:[#*]*\s*)?(?:sample|example|item)?\s*#?\s*(\d{1,5})\s*[.):\]-]?\s*[*]*\s*(accept(?:ed)?|reject(?:ed)?)\b[*]*\s*(.*)$)",
      std::regex::icase);
  RevisionParse out;
  std::vector<std::optional<ParsedVerdict>> slots(n_samples);
  const auto lines = split_lines(completion);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::smatch m;
    if (!std::regex_match(lines[i], m, kLine)) continue;
    const auto index = std::stoul(m[1].str());
    if (index < 1 || index > n_samples) {
      out.warnings.push_back("line " + std::to_string(i + 1) + ": index " + std::to_string(index) +
                             " out of range");
      continue;
    }
    if (slots[index - 1]) {
      out.warnings.push_back("line " + std::to_string(i + 1) + ": duplicate verdict for index " +
                             std::to_string(index) + " ignored");
      continue;
    }
    const bool accept = std::tolower(static_cast<unsigned char>(m[2].str()[0])) == 'a';
    // Reason follows an optional separator: "-", ":", en/em dash.
    std::string reason = unicode::trim(m[3].str());
    for (std::string_view sep : {"\xE2\x80\x94", "\xE2\x80\x93", "-", ":"}) {
      if (reason.starts_with(sep)) {
        reason = unicode::trim(std::string_view(reason).substr(sep.size()));
        break;
      }
    }
    if (!accept && reason.empty()) reason = "no reason given";
    slots[index - 1] = ParsedVerdict{index, accept ? Verdict::kAccept : Verdict::kReject, reason, false};
  }
  out.verdicts.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    if (slots[i]) {
      out.verdicts.push_back(*slots[i]);
      continue;
    }
    out.warnings.push_back("index " + std::to_string(i + 1) + " missing from judge output");
    out.verdicts.push_back(mode == FailMode::kOpen
                               ? ParsedVerdict{i + 1, Verdict::kAccept, "parse-warning", true}
                               : ParsedVerdict{i + 1, Verdict::kReject, "parse-warning", true});
  }
  return out;
}

}  // namespace synthgen
