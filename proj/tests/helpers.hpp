#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "synthgen/backend.hpp"
#include "synthgen/corpus.hpp"
#include "synthgen/random.hpp"

namespace testutil {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "synthgen-test-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << content;
}

inline std::vector<std::string> label_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("label_" + std::to_string(i));
  return out;
}

/// Gold data with distinct, label-specific texts in train and test splits.
inline synthgen::Dataset make_gold(synthgen::Task task, const std::string& language,
                                   const std::vector<std::string>& labels, std::size_t train_per_label,
                                   std::size_t test_per_label = 0) {
  static const char* kWords[] = {"alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
                                 "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa"};
  synthgen::Dataset ds;
  ds.task = task;
  ds.language = language;
  for (const auto& l : labels) ds.labels.push_back({l, std::nullopt});
  for (std::size_t li = 0; li < labels.size(); ++li) {
    for (std::size_t split = 0; split < 2; ++split) {
      const auto n = split == 0 ? train_per_label : test_per_label;
      for (std::size_t i = 0; i < n; ++i) {
        synthgen::LabeledExample e;
        e.id = language + "-" + labels[li] + "-" + (split == 0 ? "train" : "test") + "-" + std::to_string(i);
        e.text = std::string(kWords[(li * 3 + i) % 16]) + " " + labels[li] + " " + kWords[(i * 7 + 1) % 16] +
                 " example " + std::to_string(i) + " " + language;
        e.label = labels[li];
        e.language = language;
        e.split = split == 0 ? synthgen::Split::kTrain : synthgen::Split::kTest;
        e.source = synthgen::Source::kGold;
        ds.examples.push_back(std::move(e));
      }
    }
  }
  return ds;
}

/// Forwards to another backend and keeps every request.
class RecordingBackend final : public synthgen::Backend {
 public:
  explicit RecordingBackend(synthgen::Backend& inner) : inner_(inner) {}

  synthgen::ChatResult chat(std::span<const synthgen::ChatMessage> messages) override {
    {
      std::lock_guard lock(mu_);
      calls_.emplace_back(messages.begin(), messages.end());
    }
    return inner_.chat(messages);
  }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override { return inner_.embed(texts); }
  std::string model_id() const override { return inner_.model_id(); }
  int parallelism() const override { return inner_.parallelism(); }

  std::vector<std::vector<synthgen::ChatMessage>> calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  synthgen::Backend& inner_;
  mutable std::mutex mu_;
  std::vector<std::vector<synthgen::ChatMessage>> calls_;
};

/// Backend with a fixed chat reply and caller-supplied embeddings.
class FixedBackend final : public synthgen::Backend {
 public:
  std::string reply;
  std::function<std::vector<double>(const std::string&)> vector_for;
  std::atomic<int> chats{0};

  synthgen::ChatResult chat(std::span<const synthgen::ChatMessage>) override {
    ++chats;
    return {reply, std::nullopt};
  }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) override {
    std::vector<std::vector<double>> out;
    for (const auto& t : texts) out.push_back(vector_for(t));
    return out;
  }
  std::string model_id() const override { return "fixed"; }
  int parallelism() const override { return 1; }
};

inline std::size_t count_occurrences(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace testutil
