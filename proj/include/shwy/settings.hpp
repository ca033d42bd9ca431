#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shwy/dqn.hpp"
#include "shwy/llm_bridge.hpp"
#include "shwy/sim_core.hpp"

namespace shwy {

// Everything a run needs, fully resolved.
struct ResolvedSettings {
  ScenarioConfig scenario;
  TrainConfig train;
  EndpointConfig endpoint;
  BackendKind backend = BackendKind::kMockBalanced;
  bool score_cache = true;
  ScoreQuantization quantization;
  int eval_episodes = 100;
  int eval_jobs = 1;
};

struct SettingKey {
  std::string name;  // "section.key"
  std::string help;
};

// Flat registry of every tunable under "section.key" names (sections:
// scenario, reward, dqn, shaping, llm, eval). Holds explicit overrides
// only; everything else resolves to defaults, and scenario defaults follow
// scenario.kind. Later set() calls win, so callers apply sources in
// increasing precedence.
class Settings {
 public:
  static const std::vector<SettingKey>& keys();
  static bool is_key(std::string_view name);

  // Throws ConfigError for unknown keys or values that do not parse.
  void set(std::string_view key, std::string_view value);
  void unset(std::string_view key);
  std::optional<std::string> override_for(std::string_view key) const;
  const std::map<std::string, std::string>& overrides() const { return overrides_; }

  // Applies overrides on top of defaults and validates the result.
  ResolvedSettings resolve() const;
  // Resolved value of one key as text ("" for keys absent in this scenario).
  std::string get(std::string_view key) const;

  // INI text with [scenario], [reward], [dqn], [shaping], [llm], [eval]
  // sections. Top-level "shaping" and "lambda" are accepted as aliases.
  void load_ini(const std::string& text);
  void load_ini_file(const std::string& path);

  // Every key with its resolved value (null where not applicable).
  nlohmann::ordered_json snapshot() const;
  // Sets every non-null key of a snapshot.
  void apply_snapshot(const nlohmann::json& snapshot);

 private:
  std::map<std::string, std::string> overrides_;
};

// Builds the transition scorer a training run asks for, or nullptr when
// the shaping scheme does not use scores.
std::unique_ptr<TransitionScorer> make_scorer(const ResolvedSettings& settings);

}  // namespace shwy
