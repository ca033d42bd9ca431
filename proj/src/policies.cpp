#include "shwy/policies.hpp"

#include "shwy/errors.hpp"
#include "shwy/log.hpp"

namespace shwy {

std::string_view policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kRlGreedy:
      return "rl";
    case PolicyKind::kLlmOnly:
      return "llm";
    case PolicyKind::kHybrid:
      return "hybrid";
  }
  return "unknown";
}

std::optional<PolicyKind> policy_kind_from_name(std::string_view name) {
  for (const PolicyKind kind : {PolicyKind::kRlGreedy, PolicyKind::kLlmOnly, PolicyKind::kHybrid}) {
    if (policy_kind_name(kind) == name) return kind;
  }
  return std::nullopt;
}

namespace {
PolicyMetadata network_metadata(PolicyKind kind, const ModelMetadata& model) {
  PolicyMetadata m;
  m.kind = kind;
  m.shaping = model.shaping;
  m.scorer = model.scorer;
  m.training_steps = model.training_steps;
  m.trained_on = model.scenario;
  return m;
}
}  // namespace

RlGreedyPolicy::RlGreedyPolicy(QNetwork net, ModelMetadata model)
    : net_(std::move(net)), model_(std::move(model)) {}

MetaAction RlGreedyPolicy::decide(const Observation& obs) {
  return greedy_action(net_.action_values(obs));
}

PolicyMetadata RlGreedyPolicy::metadata() const {
  return network_metadata(PolicyKind::kRlGreedy, model_);
}

HybridPolicy::HybridPolicy(QNetwork net, ModelMetadata model)
    : net_(std::move(net)), model_(std::move(model)) {
  if (!model_.shaping.uses_scores()) {
    throw ConfigError("hybrid policy needs a model trained with reward shaping (model shaping is '" +
                      describe(model_.shaping) + "'); use the rl policy instead");
  }
}

HybridPolicy HybridPolicy::from_model_file(const std::string& path) {
  auto [net, model] = load_model(path);
  return HybridPolicy(std::move(net), std::move(model));
}

MetaAction HybridPolicy::decide(const Observation& obs) {
  return greedy_action(net_.action_values(obs));
}

PolicyMetadata HybridPolicy::metadata() const {
  return network_metadata(PolicyKind::kHybrid, model_);
}

LlmOnlyPolicy::LlmOnlyPolicy(std::shared_ptr<ChatBackend> backend, MetaAction fallback_action)
    : backend_(std::move(backend)), fallback_(fallback_action) {
  if (!backend_) throw ConfigError("LLM-only policy requires a backend");
}

MetaAction LlmOnlyPolicy::decide(const Observation& obs) {
  ++decisions_;
  try {
    ++backend_calls_;
    return parse_action_response(backend_->complete(render_action_prompt(obs)));
  } catch (const ParseError& e) {
    ++parse_failures_;
    log_warning(std::string("action reply unusable, using fallback: ") + e.what());
  } catch (const TransportError& e) {
    ++transport_failures_;
    log_warning(std::string("action query failed, using fallback: ") + e.what());
  }
  ++fallbacks_;
  return fallback_;
}

PolicyMetadata LlmOnlyPolicy::metadata() const {
  PolicyMetadata m;
  m.kind = PolicyKind::kLlmOnly;
  m.scorer = backend_->identity();
  return m;
}

DecisionCounters LlmOnlyPolicy::counters() const {
  return DecisionCounters{decisions_.load(), backend_calls_.load(), fallbacks_.load(),
                          parse_failures_.load(), transport_failures_.load()};
}

}  // namespace shwy
