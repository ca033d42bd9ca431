#include "shwy/settings.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "shwy/errors.hpp"
#include "shwy/eval_harness.hpp"

namespace shwy {

using ojson = nlohmann::ordered_json;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view what) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) +
                    ": expected " + std::string(what));
}

double parse_double(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) bad_value(key, text, "a number");
  return v;
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  Int v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) bad_value(key, text, "an integer");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  std::string t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  bad_value(key, text, "true or false");
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  std::string item;
  std::istringstream is{std::string(text)};
  while (std::getline(is, item, ',')) {
    if constexpr (std::is_same_v<T, double>) {
      out.push_back(parse_double(key, item));
    } else {
      out.push_back(parse_int<T>(key, item));
    }
  }
  if (out.empty()) bad_value(key, text, "a comma-separated list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, double>) {
      out += format_float_repr(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

using Setter = std::function<void(ResolvedSettings&, std::string_view key, std::string_view value)>;
using Getter = std::function<ojson(const ResolvedSettings&)>;

struct Entry {
  SettingKey key;
  Setter set;
  Getter get;
};

MergeRamp& ramp(ResolvedSettings& s) {
  if (!s.scenario.merge_ramp) {
    throw ConfigError("merge ramp keys only apply to scenario.kind = merge");
  }
  return *s.scenario.merge_ramp;
}

template <typename Field>
Entry real(std::string name, std::string help, Field field) {
  return Entry{{std::move(name), std::move(help)},
               [field](ResolvedSettings& s, std::string_view k, std::string_view v) {
                 field(s) = parse_double(k, v);
               },
               [field](const ResolvedSettings& s) {
                 return ojson(field(const_cast<ResolvedSettings&>(s)));
               }};
}

template <typename Int, typename Field>
Entry integer(std::string name, std::string help, Field field) {
  return Entry{{std::move(name), std::move(help)},
               [field](ResolvedSettings& s, std::string_view k, std::string_view v) {
                 field(s) = parse_int<Int>(k, v);
               },
               [field](const ResolvedSettings& s) {
                 return ojson(field(const_cast<ResolvedSettings&>(s)));
               }};
}

template <typename Field>
Entry boolean(std::string name, std::string help, Field field) {
  return Entry{{std::move(name), std::move(help)},
               [field](ResolvedSettings& s, std::string_view k, std::string_view v) {
                 field(s) = parse_bool(k, v);
               },
               [field](const ResolvedSettings& s) {
                 return ojson(static_cast<bool>(field(const_cast<ResolvedSettings&>(s))));
               }};
}

// Ramp keys read as null outside the merge scenario.
template <typename T, typename Field>
Entry ramp_entry(std::string name, std::string help, Field field) {
  return Entry{{std::move(name), std::move(help)},
               [field](ResolvedSettings& s, std::string_view k, std::string_view v) {
                 if constexpr (std::is_same_v<T, double>) {
                   field(ramp(s)) = parse_double(k, v);
                 } else {
                   field(ramp(s)) = parse_int<T>(k, v);
                 }
               },
               [field](const ResolvedSettings& s) {
                 if (!s.scenario.merge_ramp) return ojson(nullptr);
                 MergeRamp copy = *s.scenario.merge_ramp;
                 return ojson(field(copy));
               }};
}

template <typename Enum>
Entry named(std::string name, std::string help, std::function<Enum&(ResolvedSettings&)> field,
            std::function<std::optional<Enum>(std::string_view)> from_name,
            std::function<std::string_view(Enum)> to_name, std::string choices) {
  return Entry{{std::move(name), std::move(help) + " (" + choices + ")"},
               [=](ResolvedSettings& s, std::string_view k, std::string_view v) {
                 const auto parsed = from_name(trim(v));
                 if (!parsed) bad_value(k, v, "one of " + choices);
                 field(s) = *parsed;
               },
               [=](const ResolvedSettings& s) {
                 return ojson(std::string(to_name(field(const_cast<ResolvedSettings&>(s)))));
               }};
}

#define FIELD(expr) [](ResolvedSettings& s) -> auto& { return expr; }
#define RAMP_FIELD(expr) [](MergeRamp& r) -> auto& { return expr; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    // scenario.kind is handled by resolve() before any other key.
    e.push_back(Entry{{"scenario.kind", "highway | highway-fast | merge; selects scenario defaults"},
                      [](ResolvedSettings&, std::string_view k, std::string_view v) {
                        if (!scenario_from_name(trim(v))) {
                          bad_value(k, v, "one of highway, highway-fast, merge");
                        }
                      },
                      [](const ResolvedSettings& s) {
                        return ojson(std::string(scenario_name(s.scenario.kind)));
                      }});
    e.push_back(integer<int>("scenario.lane_count", "main-road lanes", FIELD(s.scenario.lane_count)));
    e.push_back(integer<int>("scenario.traffic_count", "scripted vehicles, ramp vehicle included",
                             FIELD(s.scenario.traffic_count)));
    e.push_back(integer<int>("scenario.horizon_steps", "policy decisions per episode",
                             FIELD(s.scenario.horizon_steps)));
    e.push_back(integer<int>("scenario.policy_hz", "policy decisions per second",
                             FIELD(s.scenario.policy_hz)));
    e.push_back(integer<int>("scenario.sim_hz", "physics substeps per second",
                             FIELD(s.scenario.sim_hz)));
    e.push_back(real("scenario.v_min", "m/s, lower reward/metric speed bound", FIELD(s.scenario.v_min)));
    e.push_back(real("scenario.v_max", "m/s, upper reward/metric speed bound", FIELD(s.scenario.v_max)));
    e.push_back(real("scenario.spawn_spacing_mean", "m, mean centre spacing of spawned traffic",
                     FIELD(s.scenario.spawn_spacing_mean)));
    e.push_back(ramp_entry<double>("scenario.ramp_length", "m, merge only",
                                   RAMP_FIELD(r.ramp_length)));
    e.push_back(ramp_entry<double>("scenario.junction_position", "m, merge only",
                                   RAMP_FIELD(r.junction_position)));
    e.push_back(ramp_entry<int>("scenario.ramp_vehicles", "0 or 1, merge only",
                                RAMP_FIELD(r.ramp_vehicles)));
    e.push_back(Entry{{"scenario.speed_grid", "m/s, comma-separated ego target speeds"},
                      [](ResolvedSettings& s, std::string_view k, std::string_view v) {
                        s.scenario.speed_grid = parse_list<double>(k, v);
                      },
                      [](const ResolvedSettings& s) { return ojson(join(s.scenario.speed_grid)); }});
    e.push_back(real("scenario.lane_width", "m", FIELD(s.scenario.lane_width)));
    e.push_back(real("scenario.vehicle_length", "m", FIELD(s.scenario.vehicle_length)));
    e.push_back(real("scenario.vehicle_width", "m", FIELD(s.scenario.vehicle_width)));
    e.push_back(real("scenario.traffic_speed_min", "m/s, lowest traffic desired speed",
                     FIELD(s.scenario.traffic_speed_min)));
    e.push_back(real("scenario.traffic_speed_max", "m/s, highest traffic desired speed",
                     FIELD(s.scenario.traffic_speed_max)));
    e.push_back(real("scenario.spawn_behind", "m behind the ego where side-lane traffic starts",
                     FIELD(s.scenario.spawn_behind)));
    e.push_back(integer<int>("scenario.ego_start_lane", "lane index", FIELD(s.scenario.ego_start_lane)));
    e.push_back(real("scenario.ego_start_speed", "m/s", FIELD(s.scenario.ego_start_speed)));
    e.push_back(real("scenario.ego_speed_gain", "1/s, proportional speed controller gain",
                     FIELD(s.scenario.ego_speed_gain)));
    e.push_back(real("scenario.lane_change_time", "s to cover ~95% of a lane change",
                     FIELD(s.scenario.lane_change_time)));
    e.push_back(real("scenario.ttc_cap", "s, TTC observation cap", FIELD(s.scenario.ttc_cap)));
    e.push_back(boolean("scenario.respawn_overtaken", "respawn traffic left far behind the ego",
                        FIELD(s.scenario.respawn_overtaken)));
    e.push_back(real("scenario.respawn_distance", "m behind the ego that counts as overtaken",
                     FIELD(s.scenario.respawn_distance)));
    e.push_back(real("scenario.idm_a_max", "m/s^2", FIELD(s.scenario.traffic.idm.a_max)));
    e.push_back(real("scenario.idm_b_comf", "m/s^2", FIELD(s.scenario.traffic.idm.b_comf)));
    e.push_back(real("scenario.idm_s0", "m", FIELD(s.scenario.traffic.idm.s0)));
    e.push_back(real("scenario.idm_time_headway", "s", FIELD(s.scenario.traffic.idm.time_headway)));
    e.push_back(real("scenario.idm_delta", "exponent", FIELD(s.scenario.traffic.idm.delta)));
    e.push_back(real("scenario.idm_b_hard", "m/s^2, IDM output lower clamp",
                     FIELD(s.scenario.traffic.idm.b_hard)));
    e.push_back(real("scenario.mobil_politeness", "[0, 1]", FIELD(s.scenario.traffic.mobil.politeness)));
    e.push_back(real("scenario.mobil_a_threshold", "m/s^2",
                     FIELD(s.scenario.traffic.mobil.a_threshold)));
    e.push_back(real("scenario.mobil_b_safe", "m/s^2", FIELD(s.scenario.traffic.mobil.b_safe)));

    e.push_back(real("reward.a", "speed weight", FIELD(s.train.reward.a)));
    e.push_back(real("reward.b", "collision weight", FIELD(s.train.reward.b)));

    e.push_back(real("dqn.learning_rate", "", FIELD(s.train.learning_rate)));
    e.push_back(real("dqn.gamma", "discount", FIELD(s.train.gamma)));
    e.push_back(integer<int>("dqn.batch_size", "", FIELD(s.train.batch_size)));
    e.push_back(integer<int>("dqn.learning_starts", "env steps of random warm-up",
                             FIELD(s.train.learning_starts)));
    e.push_back(integer<int>("dqn.train_freq", "env steps between training calls",
                             FIELD(s.train.train_freq)));
    e.push_back(integer<int>("dqn.gradient_steps", "updates per training call",
                             FIELD(s.train.gradient_steps)));
    e.push_back(integer<int>("dqn.target_update_interval", "env steps between target syncs",
                             FIELD(s.train.target_update_interval)));
    e.push_back(integer<int>("dqn.total_steps", "env steps of training", FIELD(s.train.total_steps)));
    e.push_back(real("dqn.epsilon_start", "", FIELD(s.train.epsilon_start)));
    e.push_back(real("dqn.epsilon_end", "", FIELD(s.train.epsilon_end)));
    e.push_back(real("dqn.exploration_fraction", "share of total_steps for the epsilon decay",
                     FIELD(s.train.exploration_fraction)));
    e.push_back(integer<std::uint64_t>("dqn.seed", "training seed", FIELD(s.train.seed)));
    e.push_back(integer<int>("dqn.buffer_size", "replay capacity", FIELD(s.train.buffer_size)));
    e.push_back(Entry{{"dqn.hidden", "comma-separated hidden layer widths"},
                      [](ResolvedSettings& s, std::string_view k, std::string_view v) {
                        s.train.hidden = parse_list<int>(k, v);
                      },
                      [](const ResolvedSettings& s) { return ojson(join(s.train.hidden)); }});
    e.push_back(named<OptimizerKind>("dqn.optimizer", "", FIELD(s.train.optimizer),
                                     optimizer_from_name, optimizer_name, "adam, sgd"));
    e.push_back(named<LossKind>("dqn.loss", "", FIELD(s.train.loss), loss_from_name, loss_name,
                                "mse, huber"));
    e.push_back(real("dqn.max_grad_norm", "global gradient-norm clip, 0 disables",
                     FIELD(s.train.max_grad_norm)));
    e.push_back(real("dqn.adam_beta1", "", FIELD(s.train.adam_beta1)));
    e.push_back(real("dqn.adam_beta2", "", FIELD(s.train.adam_beta2)));
    e.push_back(real("dqn.adam_epsilon", "", FIELD(s.train.adam_epsilon)));

    e.push_back(named<ShapingKind>("shaping.scheme", "", FIELD(s.train.shaping.kind),
                                   shaping_from_name, shaping_name,
                                   "none, dense, averaged, centered"));
    e.push_back(real("shaping.lambda", "dense shaping weight", FIELD(s.train.shaping.lambda)));
    e.push_back(boolean("shaping.score_cache", "memoise scores of quantised transitions",
                        FIELD(s.score_cache)));
    e.push_back(real("shaping.cache_speed_resolution", "m/s", FIELD(s.quantization.speed)));
    e.push_back(real("shaping.cache_ttc_resolution", "s", FIELD(s.quantization.ttc)));

    e.push_back(named<BackendKind>("llm.backend", "scorer / LLM-only backend", FIELD(s.backend),
                                   backend_from_name, backend_name,
                                   "mock-balanced, mock-conservative, http"));
    e.push_back(Entry{{"llm.endpoint", "base URL of an OpenAI-compatible server"},
                      [](ResolvedSettings& s, std::string_view, std::string_view v) {
                        s.endpoint.base_url = trim(v);
                      },
                      [](const ResolvedSettings& s) { return ojson(s.endpoint.base_url); }});
    e.push_back(Entry{{"llm.model", "model name sent with each request"},
                      [](ResolvedSettings& s, std::string_view, std::string_view v) {
                        s.endpoint.model_name = trim(v);
                      },
                      [](const ResolvedSettings& s) { return ojson(s.endpoint.model_name); }});
    e.push_back(real("llm.temperature", "", FIELD(s.endpoint.temperature)));
    e.push_back(integer<int>("llm.max_tokens", "", FIELD(s.endpoint.max_tokens)));
    e.push_back(integer<int>("llm.timeout_ms", "per attempt", FIELD(s.endpoint.timeout_ms)));
    e.push_back(integer<int>("llm.max_retries", "", FIELD(s.endpoint.max_retries)));
    e.push_back(named<MetaAction>("llm.fallback_action", "LLM-only action on failures",
                                  FIELD(s.endpoint.fallback_action), action_from_name, action_name,
                                  "LANE_LEFT, IDLE, LANE_RIGHT, FASTER, SLOWER"));
    e.push_back(real("llm.fallback_score", "raw 0-10 score on failures",
                     FIELD(s.endpoint.fallback_score)));

    e.push_back(integer<int>("eval.episodes", "evaluation episodes (seeds 0..N-1)",
                             FIELD(s.eval_episodes)));
    e.push_back(integer<int>("eval.jobs", "parallel evaluation threads", FIELD(s.eval_jobs)));
    return e;
  }();
  return entries;
}

#undef FIELD
#undef RAMP_FIELD

const Entry* find_entry(std::string_view name) {
  for (const Entry& e : registry()) {
    if (e.key.name == name) return &e;
  }
  return nullptr;
}

std::string json_to_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_float_repr(v.get<double>());
  throw ConfigError("unsupported snapshot value " + v.dump());
}

}  // namespace

const std::vector<SettingKey>& Settings::keys() {
  static const std::vector<SettingKey> keys = [] {
    std::vector<SettingKey> out;
    for (const Entry& e : registry()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

bool Settings::is_key(std::string_view name) { return find_entry(name) != nullptr; }

void Settings::set(std::string_view key, std::string_view value) {
  const Entry* entry = find_entry(key);
  if (!entry) throw ConfigError("unknown setting '" + std::string(key) + "'");
  // Parse check against a scratch merge configuration so ramp keys parse too.
  ResolvedSettings scratch;
  scratch.scenario = ScenarioConfig::defaults(ScenarioKind::kMerge);
  entry->set(scratch, key, value);
  overrides_[std::string(key)] = trim(value);
}

void Settings::unset(std::string_view key) { overrides_.erase(std::string(key)); }

std::optional<std::string> Settings::override_for(std::string_view key) const {
  const auto it = overrides_.find(std::string(key));
  if (it == overrides_.end()) return std::nullopt;
  return it->second;
}

ResolvedSettings Settings::resolve() const {
  ResolvedSettings s;
  ScenarioKind kind = ScenarioKind::kHighway;
  if (const auto k = override_for("scenario.kind")) kind = *scenario_from_name(*k);
  s.scenario = ScenarioConfig::defaults(kind);
  for (const Entry& e : registry()) {
    if (e.key.name == "scenario.kind") continue;
    if (const auto v = override_for(e.key.name)) e.set(s, e.key.name, *v);
  }
  s.scenario.validate();
  s.train.validate();
  s.endpoint.validate();
  if (!(s.quantization.speed > 0.0) || !(s.quantization.ttc > 0.0)) {
    throw ConfigError("score cache resolutions must be positive");
  }
  if (s.eval_episodes < 1) throw ConfigError("eval.episodes must be at least 1");
  if (s.eval_jobs < 1) throw ConfigError("eval.jobs must be at least 1");
  return s;
}

std::string Settings::get(std::string_view key) const {
  const Entry* entry = find_entry(key);
  if (!entry) throw ConfigError("unknown setting '" + std::string(key) + "'");
  const ojson v = entry->get(resolve());
  return v.is_null() ? "" : json_to_text(v);
}

void Settings::load_ini(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
  static const std::map<std::string, std::string> kAliases = {{"shaping", "shaping.scheme"},
                                                              {"lambda", "shaping.lambda"}};
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      const auto alias = kAliases.find(section);
      if (alias == kAliases.end()) {
        throw ConfigError("config file: key '" + section + "' must sit inside a section");
      }
      set(alias->second, node.data());
      continue;
    }
    for (const auto& [name, value] : node) {
      const std::string key = section + "." + name;
      if (!is_key(key)) throw ConfigError("config file: unknown key '" + name + "' in [" + section + "]");
      set(key, value.data());
    }
  }
}

void Settings::load_ini_file(const std::string& path) {
  try {
    load_ini(read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ojson Settings::snapshot() const {
  const ResolvedSettings s = resolve();
  ojson out;
  for (const Entry& e : registry()) out[e.key.name] = e.get(s);
  return out;
}

void Settings::apply_snapshot(const nlohmann::json& snapshot) {
  if (!snapshot.is_object()) throw ConfigError("settings snapshot must be a JSON object");
  // scenario.kind first so ramp keys are accepted for merge snapshots.
  if (snapshot.contains("scenario.kind")) set("scenario.kind", json_to_text(snapshot["scenario.kind"]));
  for (const auto& [key, value] : snapshot.items()) {
    if (value.is_null() || key == "scenario.kind") continue;
    set(key, json_to_text(value));
  }
}

std::unique_ptr<TransitionScorer> make_scorer(const ResolvedSettings& settings) {
  if (!settings.train.shaping.uses_scores()) return nullptr;
  std::optional<ScoreQuantization> cache;
  if (settings.score_cache) cache = settings.quantization;
  return std::make_unique<TransitionScorer>(make_backend(settings.backend, settings.endpoint),
                                            settings.endpoint.fallback_score, cache);
}

}  // namespace shwy
