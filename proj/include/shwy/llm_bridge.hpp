#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>

#include "shwy/observation.hpp"
#include "shwy/sim_core.hpp"

namespace shwy {

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:11434";
  std::string model_name = "qwen3:14b";
  double temperature = 0.0;
  int max_tokens = 8;
  int timeout_ms = 30000;
  int max_retries = 2;
  MetaAction fallback_action = MetaAction::kSlower;
  double fallback_score = 5.0;

  void validate() const;
  bool operator==(const EndpointConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Prompts

// Action-selection prompt for the LLM-only policy. Observation values are
// printed with one decimal.
std::string render_action_prompt(const Observation& obs);

// Transition-scoring prompt for reward shaping. Only ego speed and the
// centre-lane TTC of each observation are shown.
std::string render_score_prompt(const Observation& prev, MetaAction action,
                                const Observation& next);

// Shortest round-trip decimal, formatted like Python's float repr
// ("25.0", "3.125", "1e-05").
std::string format_float_repr(double value);

// ---------------------------------------------------------------------------
// Wire protocol (OpenAI-compatible chat completions)

inline constexpr std::string_view kChatCompletionsPath = "/v1/chat/completions";

// {"model", "messages": [{"role": "user", "content"}], "temperature", "max_tokens"}
std::string build_chat_request(const EndpointConfig& config, const std::string& prompt);

// choices[0].message.content of a response body; throws FormatError.
std::string extract_chat_content(const std::string& response_body);

// POSTs to {base_url}/v1/chat/completions, retrying up to max_retries times
// on transport errors, non-2xx statuses and malformed bodies. Throws
// TransportError once retries are exhausted.
std::string query_chat(const EndpointConfig& config, const std::string& prompt);

// ---------------------------------------------------------------------------
// Reply parsing

// Removes <think>...</think> style reasoning blocks, remaining markup tags
// and markdown emphasis/code markers.
std::string strip_reasoning(std::string_view text);

// First standalone integer 0-4 after stripping. Throws ParseError.
MetaAction parse_action_response(std::string_view text);

// First number in the reply; values in (10, 10.5] clamp to 10. Throws
// ParseError when no number is present or it lies outside [0, 10.5].
double parse_score_response(std::string_view text);

// ---------------------------------------------------------------------------
// Deterministic stand-ins for a language model

enum class MockProfile { kBalanced, kConservative };

// Rule table:
//   Balanced:     5; +2 next TTC >= 3; -4 next TTC < 2; +2 next speed >= 28;
//                 -1 SLOWER while prev TTC >= 3.
//   Conservative: 5; +3 SLOWER/IDLE; -3 FASTER; +2 next TTC >= 3;
//                 -4 next TTC < 2.
// Clamped to [0, 10]; TTC refers to the centre lane.
double mock_score(const Observation& prev, MetaAction action, const Observation& next,
                  MockProfile profile);

// One-step lookahead over mock_score with a crude transition guess
// (speed moves one 5 m/s notch within [20, 30]; lane changes take that
// lane's TTC). Ties follow the profile's preference order:
//   Balanced:     FASTER, IDLE, LANE_LEFT, LANE_RIGHT, SLOWER
//   Conservative: SLOWER, IDLE, LANE_LEFT, LANE_RIGHT, FASTER
MetaAction mock_action(const Observation& obs, MockProfile profile);

// ---------------------------------------------------------------------------
// Backends

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Returns the raw reply text. May throw TransportError.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string identity() const = 0;
};

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(EndpointConfig config);
  std::string complete(const std::string& prompt) override;
  std::string identity() const override;

 private:
  EndpointConfig config_;
};

// Answers both prompt kinds by reading the observation values back out of
// the prompt text and applying mock_action / mock_score.
class MockChatBackend final : public ChatBackend {
 public:
  explicit MockChatBackend(MockProfile profile) : profile_(profile) {}
  std::string complete(const std::string& prompt) override;
  std::string identity() const override;

 private:
  MockProfile profile_;
};

enum class BackendKind { kMockBalanced, kMockConservative, kHttp };

// "mock-balanced", "mock-conservative", "http".
std::string_view backend_name(BackendKind kind);
std::optional<BackendKind> backend_from_name(std::string_view name);
std::shared_ptr<ChatBackend> make_backend(BackendKind kind, const EndpointConfig& endpoint);

// ---------------------------------------------------------------------------
// Score cache

struct ScoreQuantization {
  double speed = 0.5;  // m/s
  double ttc = 0.5;    // s
  bool operator==(const ScoreQuantization&) const = default;
};

// Floor-quantised (speed, centre TTC) before and after, plus the action.
struct ScoreCacheKey {
  std::int64_t prev_speed = 0;
  std::int64_t prev_ttc = 0;
  int action = 0;
  std::int64_t next_speed = 0;
  std::int64_t next_ttc = 0;
  bool operator==(const ScoreCacheKey&) const = default;
};

ScoreCacheKey make_cache_key(const Observation& prev, MetaAction action, const Observation& next,
                             const ScoreQuantization& q);

struct ScoreCacheKeyHash {
  std::size_t operator()(const ScoreCacheKey& k) const noexcept;
};

// Thread-safe memo of raw scores.
class ScoreCache {
 public:
  // Hit: cached value. Miss: runs compute, stores and returns its result.
  // Exceptions from compute propagate and nothing is stored.
  double cached_score(const ScoreCacheKey& key, const std::function<double()>& compute);

  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t misses() const { return misses_.load(); }
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::unordered_map<ScoreCacheKey, double, ScoreCacheKeyHash> entries_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

struct ScorerCounters {
  std::uint64_t requests = 0;       // raw_score calls
  std::uint64_t backend_calls = 0;  // prompts actually sent to the backend
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t fallbacks = 0;
  std::uint64_t parse_failures = 0;
  std::uint64_t transport_failures = 0;
  bool operator==(const ScorerCounters&) const = default;
};

// Prompt -> backend -> parse pipeline for transition scores, with optional
// caching. Backend and parse failures yield fallback_score and are counted.
class TransitionScorer {
 public:
  TransitionScorer(std::shared_ptr<ChatBackend> backend, double fallback_score,
                   std::optional<ScoreQuantization> cache);

  double raw_score(const Observation& prev, MetaAction action, const Observation& next);
  ScorerCounters counters() const;
  std::string identity() const { return backend_->identity(); }
  bool caching() const { return cache_.has_value(); }

 private:
  std::shared_ptr<ChatBackend> backend_;
  double fallback_score_;
  std::optional<ScoreQuantization> quantization_;
  std::optional<ScoreCache> cache_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> backend_calls_{0};
  std::atomic<std::uint64_t> fallbacks_{0};
  std::atomic<std::uint64_t> parse_failures_{0};
  std::atomic<std::uint64_t> transport_failures_{0};
};

}  // namespace shwy
