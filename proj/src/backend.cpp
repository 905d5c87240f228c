#include "httplib.h"

#include "synthgen/backend.hpp"

#include <cmath>
#include <regex>
#include <thread>

#include "synthgen/error.hpp"
#include "synthgen/parallel.hpp"
#include "synthgen/random.hpp"

namespace synthgen {
namespace {

std::int64_t now_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool retryable_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

bool is_timeout(httplib::Error err) {
  return err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
}

}  // namespace

void BackendConfig::validate() const {
  if (base_url.empty()) throw ConfigError("backend.base_url must be set");
  if (model_id.empty()) throw ConfigError("backend.model_id must be set");
  if (!(temperature >= 0.0 && temperature <= 2.0)) throw ConfigError("backend.temperature must be in [0, 2]");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("backend.top_p must be in (0, 1]");
  if (max_tokens < 1) throw ConfigError("backend.max_tokens must be >= 1");
  if (max_retries < 0) throw ConfigError("backend.max_retries must be >= 0");
  if (parallelism < 1) throw ConfigError("backend.parallelism must be >= 1");
  if (embed_batch < 1) throw ConfigError("backend.embed_batch must be >= 1");
  if (timeout.count() <= 0) throw ConfigError("backend.timeout_ms must be positive");
}

nlohmann::json to_json(const BackendConfig& c) {
  return {{"base_url", c.base_url},
          {"model_id", c.model_id},
          {"embedding_model", c.embedding_model},
          {"temperature", c.temperature},
          {"top_p", c.top_p},
          {"max_tokens", c.max_tokens},
          {"timeout_ms", c.timeout.count()},
          {"max_retries", c.max_retries},
          {"parallelism", c.parallelism},
          {"backoff_base_ms", c.backoff_base.count()},
          {"backoff_max_ms", c.backoff_max.count()},
          {"embed_batch", c.embed_batch},
          {"jitter_seed", c.jitter_seed}};
}

BackendConfig backend_config_from_json(const nlohmann::json& j) {
  BackendConfig c;
  try {
    c.base_url = j.value("base_url", c.base_url);
    c.model_id = j.value("model_id", c.model_id);
    c.embedding_model = j.value("embedding_model", c.embedding_model);
    c.temperature = j.value("temperature", c.temperature);
    c.top_p = j.value("top_p", c.top_p);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.timeout = std::chrono::milliseconds(j.value("timeout_ms", c.timeout.count()));
    c.max_retries = j.value("max_retries", c.max_retries);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.backoff_base = std::chrono::milliseconds(j.value("backoff_base_ms", c.backoff_base.count()));
    c.backoff_max = std::chrono::milliseconds(j.value("backoff_max_ms", c.backoff_max.count()));
    c.embed_batch = j.value("embed_batch", c.embed_batch);
    c.jitter_seed = j.value("jitter_seed", c.jitter_seed);
    if (j.contains("api_key") && j["api_key"].is_string() && !j["api_key"].get<std::string>().empty()) {
      c.api_key = j["api_key"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad backend config: ") + ex.what());
  }
  return c;
}

Transcript::Transcript(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Continue numbering after entries from an earlier session.
  if (std::ifstream prior(path, std::ios::binary); prior) {
    std::string line;
    while (std::getline(prior, line)) {
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) continue;
      seq_ = std::max<std::uint64_t>(seq_, j.value("seq", std::uint64_t{0}) + 1);
      last_us_ = std::max<std::int64_t>(last_us_, j.value("ts_us", std::int64_t{0}));
    }
  }
  out_.open(path, std::ios::app | std::ios::binary);
  if (!out_) throw StoreError("cannot open transcript " + path.string());
}

void Transcript::record(nlohmann::json entry) {
  std::lock_guard lock(mu_);
  last_us_ = std::max(last_us_, now_us());
  entry["seq"] = seq_++;
  entry["ts_us"] = last_us_;
  if (out_.is_open()) {
    out_ << entry.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    out_.flush();
  }
  entries_.push_back(std::move(entry));
}

std::vector<nlohmann::json> Transcript::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::size_t Transcript::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

nlohmann::json to_json(std::span<const ChatMessage> messages) {
  auto arr = nlohmann::json::array();
  for (const auto& m : messages) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return arr;
}

HttpBackend::HttpBackend(BackendConfig cfg)
    : cfg_(std::move(cfg)), in_flight_(std::max(cfg_.parallelism, 1)), jitter_state_(cfg_.jitter_seed) {
  cfg_.validate();
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.base_url, m, kUrl)) {
    throw ConfigError("backend.base_url must look like http(s)://host[:port][/prefix]");
  }
  scheme_host_port_ = m[1].str();
  path_prefix_ = m[2].str();
  while (path_prefix_.ends_with('/')) path_prefix_.pop_back();
}

std::chrono::milliseconds HttpBackend::backoff_delay(int attempt) {
  const double base = static_cast<double>(cfg_.backoff_base.count()) * std::ldexp(1.0, attempt);
  const double capped = std::min(base, static_cast<double>(cfg_.backoff_max.count()));
  double jitter = 0.0;
  {
    std::lock_guard lock(jitter_mu_);
    jitter_state_ = splitmix64(jitter_state_);
    jitter = static_cast<double>(jitter_state_ >> 11) * 0x1.0p-53;
  }
  // Full jitter on the upper half: delay in [capped/2, capped).
  return std::chrono::milliseconds(static_cast<long>(capped * (0.5 + 0.5 * jitter)));
}

HttpBackend::Response HttpBackend::post_with_retries(const std::string& path, const std::string& body,
                                                     std::string_view kind) {
  int last_status = 0;
  bool last_timeout = false;
  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      const auto delay = backoff_delay(attempt - 1);
      ++backoffs_;
      if (transcript_) {
        transcript_->record({{"kind", "backoff"},
                             {"call", kind},
                             {"attempt", attempt},
                             {"status", last_status},
                             {"error", last_error},
                             {"delay_ms", delay.count()}});
      }
      std::this_thread::sleep_for(delay);
    }
    in_flight_.acquire();
    ++attempts_;
    httplib::Result res = [&] {
      httplib::Client client(scheme_host_port_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      httplib::Headers headers;
      if (cfg_.api_key) headers.emplace("Authorization", "Bearer " + *cfg_.api_key);
      return client.Post(path_prefix_ + path, headers, body, "application/json");
    }();
    in_flight_.release();
    if (!res) {
      last_status = 0;
      last_timeout = is_timeout(res.error());
      last_error = httplib::to_string(res.error());
      continue;
    }
    last_timeout = false;
    last_status = res->status;
    if (res->status >= 200 && res->status < 300) return {res->status, res->body};
    last_error = "HTTP " + std::to_string(res->status);
    if (!retryable_status(res->status)) {
      throw BackendError(std::string(kind) + " request failed with HTTP " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 200),
                         res->status);
    }
  }
  const auto attempts = std::to_string(cfg_.max_retries + 1);
  if (last_timeout) throw TimeoutError(std::string(kind) + " request timed out after " + attempts + " attempts");
  throw BackendError(std::string(kind) + " request failed after " + attempts + " attempts (last: " + last_error + ")",
                     last_status);
}

ChatResult HttpBackend::chat(std::span<const ChatMessage> messages) {
  if (messages.empty()) throw ConfigError("chat request needs at least one message");
  const nlohmann::json request = {{"model", cfg_.model_id},
                                  {"messages", to_json(messages)},
                                  {"temperature", cfg_.temperature},
                                  {"top_p", cfg_.top_p},
                                  {"max_tokens", cfg_.max_tokens}};
  const auto started = now_us();
  Response response;
  try {
    response = post_with_retries("/v1/chat/completions", request.dump(), "chat");
  } catch (const BackendError& ex) {
    if (transcript_) {
      transcript_->record({{"kind", "chat"}, {"started_us", started}, {"request", request}, {"error", ex.what()}});
    }
    throw;
  }
  ChatResult result;
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(response.body);
    result.content = body.at("choices").at(0).at("message").at("content").get<std::string>();
    if (auto u = body.find("usage"); u != body.end() && u->is_object()) {
      result.usage = TokenUsage{u->value("prompt_tokens", 0L), u->value("completion_tokens", 0L),
                                u->value("total_tokens", 0L)};
    }
  } catch (const nlohmann::json::exception& ex) {
    throw BackendError(std::string("malformed chat completion response: ") + ex.what(), response.status);
  }
  if (transcript_) {
    nlohmann::json entry = {{"kind", "chat"}, {"started_us", started}, {"request", request}, {"response", body}};
    if (result.usage) {
      entry["usage"] = {{"prompt_tokens", result.usage->prompt_tokens},
                        {"completion_tokens", result.usage->completion_tokens},
                        {"total_tokens", result.usage->total_tokens}};
    }
    transcript_->record(std::move(entry));
  }
  return result;
}

std::vector<std::vector<double>> HttpBackend::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw ConfigError("embed needs at least one text");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw ConfigError("embed input " + std::to_string(i) + " is an empty string");
  }
  const auto& model = cfg_.embedding_model.empty() ? cfg_.model_id : cfg_.embedding_model;
  const auto n_batches = embed_request_count(texts.size(), cfg_.embed_batch);
  std::vector<std::vector<double>> vectors(texts.size());
  parallel_for(n_batches, static_cast<std::size_t>(cfg_.parallelism), [&](std::size_t b) {
    const auto begin = b * cfg_.embed_batch;
    const auto end = std::min(texts.size(), begin + cfg_.embed_batch);
    nlohmann::json request = {{"model", model}, {"input", nlohmann::json::array()}};
    for (auto i = begin; i < end; ++i) request["input"].push_back(texts[i]);
    const auto started = now_us();
    const auto response = post_with_retries("/v1/embeddings", request.dump(), "embed");
    try {
      const auto body = nlohmann::json::parse(response.body);
      const auto& data = body.at("data");
      if (data.size() != end - begin) {
        throw BackendError("embedding response has " + std::to_string(data.size()) + " vectors for " +
                               std::to_string(end - begin) + " inputs",
                           response.status);
      }
      for (std::size_t k = 0; k < data.size(); ++k) {
        const auto slot = data[k].contains("index") ? data[k]["index"].get<std::size_t>() : k;
        if (slot >= end - begin) throw BackendError("embedding index out of range", response.status);
        vectors[begin + slot] = data[k].at("embedding").get<std::vector<double>>();
      }
      if (transcript_) {
        transcript_->record({{"kind", "embed"},
                             {"started_us", started},
                             {"request", request},
                             {"response", {{"vectors", data.size()}}}});
      }
    } catch (const nlohmann::json::exception& ex) {
      throw BackendError(std::string("malformed embeddings response: ") + ex.what(), response.status);
    }
  });
  const auto dim = vectors.front().size();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != dim || dim == 0) {
      throw BackendError("embedding dimension mismatch at input " + std::to_string(i) + ": " +
                             std::to_string(vectors[i].size()) + " vs " + std::to_string(dim),
                         200);
    }
  }
  return vectors;
}

std::string chat_complete(std::span<const ChatMessage> messages, const BackendConfig& cfg) {
  return HttpBackend(cfg).chat(messages).content;
}

std::vector<std::vector<double>> embed(std::span<const std::string> texts, const BackendConfig& cfg) {
  return HttpBackend(cfg).embed(texts);
}

std::size_t embed_request_count(std::size_t n_texts, std::size_t batch) {
  return batch == 0 ? 0 : (n_texts + batch - 1) / batch;
}

}  // namespace synthgen
