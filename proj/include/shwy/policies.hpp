#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "shwy/dqn.hpp"
#include "shwy/llm_bridge.hpp"
#include "shwy/observation.hpp"

namespace shwy {

enum class PolicyKind { kRlGreedy, kLlmOnly, kHybrid };

// "rl", "llm", "hybrid".
std::string_view policy_kind_name(PolicyKind kind);
std::optional<PolicyKind> policy_kind_from_name(std::string_view name);

struct PolicyMetadata {
  PolicyKind kind = PolicyKind::kRlGreedy;
  ShapingScheme shaping;           // scheme the network was trained under
  std::string scorer = "none";     // training scorer, or the acting backend for LLM-only
  std::int64_t training_steps = 0;  // 0 for LLM-only
  std::string trained_on;          // scenario name, empty for LLM-only
};

struct DecisionCounters {
  std::uint64_t decisions = 0;
  std::uint64_t backend_calls = 0;
  std::uint64_t fallbacks = 0;
  std::uint64_t parse_failures = 0;
  std::uint64_t transport_failures = 0;
  bool operator==(const DecisionCounters&) const = default;
};

// decide() may be called concurrently from several evaluation threads.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual MetaAction decide(const Observation& obs) = 0;
  virtual PolicyMetadata metadata() const = 0;
  virtual DecisionCounters counters() const { return {}; }
};

// Greedy argmax over a trained network; no exploration and no I/O.
class RlGreedyPolicy final : public Policy {
 public:
  RlGreedyPolicy(QNetwork net, ModelMetadata model);
  MetaAction decide(const Observation& obs) override;
  PolicyMetadata metadata() const override;

 private:
  QNetwork net_;
  ModelMetadata model_;
};

// A network trained under LLM reward shaping, deployed exactly like
// RlGreedyPolicy. It is built from a model alone and has no backend slot.
class HybridPolicy final : public Policy {
 public:
  // Throws ConfigError when the model was trained without shaping.
  HybridPolicy(QNetwork net, ModelMetadata model);
  static HybridPolicy from_model_file(const std::string& path);

  MetaAction decide(const Observation& obs) override;
  PolicyMetadata metadata() const override;

 private:
  QNetwork net_;
  ModelMetadata model_;
};

// Prompts the backend with the action prompt every step. Transport and
// parse failures return fallback_action and are counted.
class LlmOnlyPolicy final : public Policy {
 public:
  LlmOnlyPolicy(std::shared_ptr<ChatBackend> backend, MetaAction fallback_action);

  MetaAction decide(const Observation& obs) override;
  PolicyMetadata metadata() const override;
  DecisionCounters counters() const override;

 private:
  std::shared_ptr<ChatBackend> backend_;
  MetaAction fallback_;
  std::atomic<std::uint64_t> decisions_{0};
  std::atomic<std::uint64_t> backend_calls_{0};
  std::atomic<std::uint64_t> fallbacks_{0};
  std::atomic<std::uint64_t> parse_failures_{0};
  std::atomic<std::uint64_t> transport_failures_{0};
};

}  // namespace shwy
