#include "httplib.h"

#include "synthgen/sim.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "synthgen/error.hpp"
#include "synthgen/fsutil.hpp"
#include "synthgen/random.hpp"
#include "synthgen/unicode.hpp"

namespace synthgen {
namespace {

constexpr std::string_view kSyllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "ba",
                                           "de", "fu", "gi", "ho", "ja", "ku", "ly", "mo", "ni", "pe"};
constexpr std::string_view kRejectReasons[] = {"off-topic", "only indirectly related to the label",
                                               "ungrammatical", "does not express the label clearly"};
constexpr std::string_view kDefaultTemplate = "{label} request {word} number {num}";

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string pseudo_word(Rng& rng) {
  std::string w;
  const auto n = 2 + rng.index(3);
  for (std::uint64_t i = 0; i < n; ++i) w += kSyllables[rng.index(std::size(kSyllables))];
  return w;
}

std::string readable_label(std::string label) {
  std::replace(label.begin(), label.end(), '_', ' ');
  return label;
}

std::uint64_t message_seed(std::span<const ChatMessage> messages, std::uint64_t base) {
  std::string key;
  for (const auto& m : messages) {
    key += to_string(m.role);
    key.push_back('\x1f');
    key += m.content;
    key.push_back('\x1e');
  }
  return derive_seed(base, key);
}

std::string respond_generation(const PromptMarker& marker, const SimBehavior& b, Rng& rng) {
  const auto label = readable_label(marker.label);
  std::vector<std::string> lines;
  lines.reserve(marker.n);
  for (std::size_t i = 0; i < marker.n; ++i) {
    // Fixed draw count per line keeps the stream aligned across settings.
    const double dup_draw = rng.uniform();
    const double off_draw = rng.uniform();
    const auto pick = rng.next();
    const auto num = rng.index(10'000);
    auto word = pseudo_word(rng);
    if (i > 0 && dup_draw < b.duplicate_rate) {
      lines.push_back(lines[pick % lines.size()]);
      continue;
    }
    if (off_draw < b.off_language_rate) {
      lines.push_back(std::string(kOffLanguageTag) + " this sentence about " + label + " is in the wrong language " +
                      std::to_string(num));
      continue;
    }
    const auto& templates = b.sample_templates;
    std::string tmpl = templates.empty() ? std::string(kDefaultTemplate) : templates[pick % templates.size()];
    tmpl = replace_all(std::move(tmpl), "{label}", label);
    tmpl = replace_all(std::move(tmpl), "{word}", word);
    tmpl = replace_all(std::move(tmpl), "{num}", std::to_string(num));
    tmpl = replace_all(std::move(tmpl), "{lang}", marker.language);
    lines.push_back(std::move(tmpl));
  }
  return "Here are the examples:\n" + format_numbered_list(lines);
}

std::vector<std::string> numbered_items(std::string_view user, std::size_t n) {
  static const std::regex kItem(R"(^(\d+)\. (.*)$)");
  std::vector<std::string> items(n);
  std::vector<bool> seen(n, false);
  std::size_t pos = 0;
  while (pos < user.size()) {
    auto nl = user.find('\n', pos);
    if (nl == std::string_view::npos) nl = user.size();
    const std::string line(user.substr(pos, nl - pos));
    pos = nl + 1;
    std::smatch m;
    if (!std::regex_match(line, m, kItem)) continue;
    const auto idx = std::stoul(m[1].str());
    if (idx >= 1 && idx <= n && !seen[idx - 1]) {
      seen[idx - 1] = true;
      items[idx - 1] = m[2].str();
    }
  }
  return items;
}

std::string respond_revision(std::span<const ChatMessage> messages, const PromptMarker& marker,
                             const SimBehavior& b, Rng& rng) {
  std::string user;
  for (const auto& m : messages) {
    if (m.role == ChatMessage::Role::kUser) user += m.content + "\n";
  }
  const auto items = numbered_items(user, marker.n);
  std::string out;
  for (std::size_t i = 0; i < marker.n; ++i) {
    const bool reject = rng.uniform() >= b.accept_probability;
    const auto reason = kRejectReasons[rng.index(std::size(kRejectReasons))];
    out += std::to_string(i + 1);
    if (items[i].starts_with(kOffLanguageTag)) {
      out += ": REJECT - written in the wrong language\n";
    } else if (reject) {
      out += ": REJECT - " + std::string(reason) + "\n";
    } else {
      out += ": ACCEPT\n";
    }
  }
  return out;
}

std::string respond_summary(const PromptMarker& marker) {
  const auto label = readable_label(marker.label);
  return "This intent involves texts about " + label + ", such as requests, questions and statements that "
         "clearly express " + label + " in everyday language, often with specific details.";
}

long rough_tokens(std::string_view s) { return static_cast<long>(unicode::split_whitespace(s).size()); }

}  // namespace

const SimBehavior& SimScript::behavior(const std::string& language, const std::string& task) const {
  for (const auto& key : {std::pair{language, task}, std::pair{language, std::string("*")},
                          std::pair{std::string("*"), task}, std::pair{std::string("*"), std::string("*")}}) {
    if (auto it = behaviors.find(key); it != behaviors.end()) return it->second;
  }
  throw ConfigError("sim script does not cover (language=" + language + ", task=" + task + ")");
}

void SimScript::validate() const {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  for (const auto& [key, b] : behaviors) {
    const auto where = "(" + key.first + ", " + key.second + ")";
    if (!in_unit(b.accept_probability)) throw ConfigError("accept_probability out of [0,1] for " + where);
    if (!in_unit(b.duplicate_rate)) throw ConfigError("duplicate_rate out of [0,1] for " + where);
    if (!in_unit(b.off_language_rate)) throw ConfigError("off_language_rate out of [0,1] for " + where);
  }
}

SimScript SimScript::from_json(const nlohmann::json& j) {
  SimScript s;
  try {
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& entry : j.at("behaviors")) {
      SimBehavior b;
      b.accept_probability = entry.value("accept_probability", 1.0);
      b.sample_templates = entry.value("sample_templates", std::vector<std::string>{});
      b.duplicate_rate = entry.value("duplicate_rate", 0.0);
      b.off_language_rate = entry.value("off_language_rate", 0.0);
      s.behaviors[{entry.value("language", std::string("*")), entry.value("task", std::string("*"))}] = b;
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad sim script: ") + ex.what());
  }
  s.validate();
  return s;
}

SimScript SimScript::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& ex) {
    throw ConfigError(path.string() + ": " + ex.what());
  } catch (const StoreError& ex) {
    throw ConfigError(ex.what());
  }
}

nlohmann::json SimScript::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& [key, b] : behaviors) {
    arr.push_back({{"language", key.first},
                   {"task", key.second},
                   {"accept_probability", b.accept_probability},
                   {"sample_templates", b.sample_templates},
                   {"duplicate_rate", b.duplicate_rate},
                   {"off_language_rate", b.off_language_rate}});
  }
  return {{"seed", seed}, {"behaviors", arr}};
}

std::string sim_respond(std::span<const ChatMessage> messages, const SimScript& script) {
  if (messages.empty()) throw ConfigError("chat request needs at least one message");
  const auto marker = find_marker(messages);
  if (!marker) throw DataError("simulated backend cannot route a prompt without a synthgen marker");
  Rng rng(message_seed(messages, script.seed));
  switch (marker->kind) {
    case PromptMarker::Kind::kGeneration:
      return respond_generation(*marker, script.behavior(marker->language, marker->task), rng);
    case PromptMarker::Kind::kRevision:
      return respond_revision(messages, *marker, script.behavior(marker->language, marker->task), rng);
    case PromptMarker::Kind::kSummary:
      return respond_summary(*marker);
  }
  return {};
}

std::vector<double> sim_embedding(std::string_view text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  for (const auto& tok : unicode::split_whitespace(unicode::casefold(text))) {
    const auto h = fnv1a64(tok);
    v[h % dim] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    v[fnv1a64(text) % dim] = 1.0;
    return v;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

ChatResult SimBackend::chat(std::span<const ChatMessage> messages) {
  ChatResult r{sim_respond(messages, script_), std::nullopt};
  long prompt = 0;
  for (const auto& m : messages) prompt += rough_tokens(m.content);
  const long completion = rough_tokens(r.content);
  r.usage = TokenUsage{prompt, completion, prompt + completion};
  if (transcript_) {
    transcript_->record({{"kind", "chat"},
                         {"backend", "sim"},
                         {"request", {{"model", model_id_}, {"messages", to_json(messages)}}},
                         {"response", {{"content", r.content}}},
                         {"usage",
                          {{"prompt_tokens", prompt},
                           {"completion_tokens", completion},
                           {"total_tokens", prompt + completion}}}});
  }
  return r;
}

std::vector<std::vector<double>> SimBackend::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw ConfigError("embed needs at least one text");
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw ConfigError("embed input " + std::to_string(i) + " is an empty string");
    out.push_back(sim_embedding(texts[i]));
  }
  if (transcript_) {
    transcript_->record({{"kind", "embed"}, {"backend", "sim"}, {"response", {{"vectors", out.size()}}}});
  }
  return out;
}

struct SimServer::Impl {
  SimScript script;
  std::size_t dim;
  httplib::Server server;

  Impl(SimScript s, std::size_t d) : script(std::move(s)), dim(d) {}
};

SimServer::SimServer(SimScript script, std::size_t embedding_dim)
    : impl_(std::make_unique<Impl>(std::move(script), embedding_dim)) {
  auto& srv = impl_->server;
  auto bad_request = [](httplib::Response& res, int status, const std::string& msg) {
    res.status = status;
    res.set_content(nlohmann::json({{"error", {{"message", msg}}}}).dump(), "application/json");
  };
  srv.Post("/v1/chat/completions", [this, bad_request](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = nlohmann::json::parse(req.body);
      std::vector<ChatMessage> messages;
      for (const auto& m : body.at("messages")) {
        messages.push_back({parse_role(m.at("role").get<std::string>()), m.at("content").get<std::string>()});
      }
      const auto content = sim_respond(messages, impl_->script);
      long prompt = 0;
      for (const auto& m : messages) prompt += rough_tokens(m.content);
      const long completion = rough_tokens(content);
      nlohmann::json out = {
          {"id", "sim-" + std::to_string(fnv1a64(req.body))},
          {"object", "chat.completion"},
          {"model", body.value("model", std::string("sim"))},
          {"choices",
           {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", "stop"}}}},
          {"usage", {{"prompt_tokens", prompt}, {"completion_tokens", completion}, {"total_tokens", prompt + completion}}}};
      res.set_content(out.dump(), "application/json");
    } catch (const ConfigError& ex) {
      bad_request(res, 422, ex.what());
    } catch (const std::exception& ex) {
      bad_request(res, 400, ex.what());
    }
  });
  srv.Post("/v1/embeddings", [this, bad_request](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = nlohmann::json::parse(req.body);
      std::vector<std::string> inputs;
      const auto& input = body.at("input");
      if (input.is_string()) inputs.push_back(input.get<std::string>());
      else inputs = input.get<std::vector<std::string>>();
      auto data = nlohmann::json::array();
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", sim_embedding(inputs[i], impl_->dim)}});
      }
      res.set_content(nlohmann::json({{"object", "list"}, {"data", data}, {"model", body.value("model", "sim")}}).dump(),
                      "application/json");
    } catch (const std::exception& ex) {
      bad_request(res, 400, ex.what());
    }
  });
  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
}

SimServer::~SimServer() { stop(); }

int SimServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  port_ = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw ConfigError("cannot bind sim server to " + host + ":" + std::to_string(port));
  thread_ = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return port_;
}

void SimServer::listen(const std::string& host, int port) {
  port_ = port;
  if (!impl_->server.listen(host, port)) {
    throw ConfigError("cannot serve on " + host + ":" + std::to_string(port));
  }
}

void SimServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace synthgen
