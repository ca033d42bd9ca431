#pragma once

#include <deque>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "shwy/errors.hpp"
#include "shwy/llm_bridge.hpp"

#ifndef SHWY_TEST_FIXTURE_DIR
#error "SHWY_TEST_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace shwy::testing {

struct CorpusEntry {
  std::string id;
  std::string kind;  // "action" or "score"
  std::string reply;
  bool expect_error = false;
  double expected = 0.0;
};

inline std::vector<CorpusEntry> load_parser_corpus() {
  const std::string path = std::string(SHWY_TEST_FIXTURE_DIR) + "/parser_corpus.jsonl";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<CorpusEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    CorpusEntry e;
    e.id = j.at("id").get<std::string>();
    e.kind = j.at("kind").get<std::string>();
    e.reply = j.at("reply").get<std::string>();
    if (j.at("expected").is_string()) {
      e.expect_error = true;
    } else {
      e.expected = j.at("expected").get<double>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

// Replays canned replies in order; an empty queue throws TransportError.
class ScriptedBackend final : public ChatBackend {
 public:
  explicit ScriptedBackend(std::deque<std::string> replies) : replies_(std::move(replies)) {}

  std::string complete(const std::string& prompt) override {
    std::lock_guard<std::mutex> lock(mutex_);
    prompts.push_back(prompt);
    if (replies_.empty()) throw TransportError("scripted backend exhausted");
    std::string r = replies_.front();
    replies_.pop_front();
    return r;
  }
  std::string identity() const override { return "scripted"; }

  std::vector<std::string> prompts;

 private:
  std::mutex mutex_;
  std::deque<std::string> replies_;
};

// Wraps another backend and counts calls.
class CountingBackend final : public ChatBackend {
 public:
  explicit CountingBackend(std::shared_ptr<ChatBackend> inner) : inner_(std::move(inner)) {}
  std::string complete(const std::string& prompt) override {
    ++calls;
    return inner_->complete(prompt);
  }
  std::string identity() const override { return inner_->identity(); }

  std::atomic<std::uint64_t> calls{0};

 private:
  std::shared_ptr<ChatBackend> inner_;
};

}  // namespace shwy::testing
