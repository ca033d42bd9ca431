#include "shwy/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "shwy/errors.hpp"
#include "shwy/llm_bridge.hpp"
#include "shwy/observation.hpp"

namespace shwy {

using ojson = nlohmann::ordered_json;

double speed_score(double mean_speed, double v_min, double v_max) {
  return std::clamp((mean_speed - v_min) / (v_max - v_min), 0.0, 1.0);
}

Aggregates compute_aggregates(const std::vector<EpisodeResult>& rows, double v_min, double v_max) {
  Aggregates a;
  if (rows.empty()) return a;
  double successes = 0.0;
  double lane_changes = 0.0;
  double speed = 0.0;
  for (const EpisodeResult& r : rows) {
    successes += r.success ? 1.0 : 0.0;
    lane_changes += r.lane_changes;
    speed += r.mean_speed;
  }
  const auto n = static_cast<double>(rows.size());
  a.success_rate = 100.0 * successes / n;
  a.lane_change_score = lane_changes / n;
  a.mean_speed = speed / n;
  a.speed_score = speed_score(a.mean_speed, v_min, v_max);
  return a;
}

EpisodeResult run_episode(Policy& policy, const ScenarioConfig& config, std::uint64_t seed) {
  SimState state = reset(config, seed);
  Observation obs = extract_observation(state);
  EpisodeResult result;
  result.seed = seed;
  double speed_sum = 0.0;
  int substeps = 0;
  while (!state.done()) {
    const MetaAction action = policy.decide(obs);
    const StepInfo info = advance(state, action);
    speed_sum += info.speed_sum;
    substeps += info.substeps;
    result.lane_changes += info.lane_changes;
    if (info.collided_now) {
      result.collided_at = state.step_count - 1;
      break;
    }
    obs = extract_observation(state);
  }
  result.steps_survived = result.collided_at ? *result.collided_at : state.step_count;
  result.success = !state.collided && state.step_count == config.horizon_steps;
  result.mean_speed = substeps > 0 ? speed_sum / substeps : 0.0;
  return result;
}

MetricsReport evaluate(Policy& policy, const ScenarioConfig& config, int episodes, int jobs) {
  if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  config.validate();

  std::vector<EpisodeResult> rows(static_cast<std::size_t>(episodes));
  if (jobs == 1) {
    for (int e = 0; e < episodes; ++e) rows[e] = run_episode(policy, config, e);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&] {
      for (int e = next++; e < episodes; e = next++) {
        try {
          rows[e] = run_episode(policy, config, e);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < std::min(jobs, episodes); ++j) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  MetricsReport report;
  report.env = std::string(scenario_name(config.kind));
  report.policy = policy.metadata();
  report.episodes = episodes;
  report.horizon_steps = config.horizon_steps;
  report.v_min = config.v_min;
  report.v_max = config.v_max;
  report.rows = std::move(rows);
  report.aggregates = compute_aggregates(report.rows, config.v_min, config.v_max);
  if (report.policy.kind == PolicyKind::kLlmOnly) report.llm_counters = policy.counters();
  return report;
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

ojson aggregates_json(const Aggregates& a) {
  ojson j;
  j["success_rate"] = a.success_rate;
  j["lane_change_score"] = a.lane_change_score;
  j["mean_speed"] = a.mean_speed;
  j["speed_score"] = a.speed_score;
  return j;
}

std::string policy_label(const PolicyMetadata& p) {
  switch (p.kind) {
    case PolicyKind::kRlGreedy:
      return "rl";
    case PolicyKind::kHybrid:
      return "hybrid " + describe(p.shaping) + " " + p.scorer;
    case PolicyKind::kLlmOnly:
      return "llm " + p.scorer;
  }
  return "unknown";
}

}  // namespace

std::string report_to_json(const MetricsReport& report) {
  ojson j;
  j["schema"] = report.schema;
  j["env"] = report.env;
  ojson policy;
  policy["kind"] = std::string(policy_kind_name(report.policy.kind));
  policy["shaping"] = std::string(shaping_name(report.policy.shaping.kind));
  policy["lambda"] = report.policy.shaping.lambda;
  policy["scorer"] = report.policy.scorer;
  policy["training_steps"] = report.policy.training_steps;
  policy["trained_on"] = report.policy.trained_on;
  j["policy"] = policy;
  j["episodes"] = report.episodes;
  j["horizon_steps"] = report.horizon_steps;
  j["v_min"] = report.v_min;
  j["v_max"] = report.v_max;
  j["aggregates"] = aggregates_json(report.aggregates);
  if (report.llm_counters) {
    const DecisionCounters& c = *report.llm_counters;
    j["llm_counters"] = ojson{{"decisions", c.decisions},
                              {"backend_calls", c.backend_calls},
                              {"fallbacks", c.fallbacks},
                              {"parse_failures", c.parse_failures},
                              {"transport_failures", c.transport_failures}};
  }
  ojson rows = ojson::array();
  for (const EpisodeResult& r : report.rows) {
    ojson row;
    row["seed"] = r.seed;
    row["success"] = r.success;
    row["lane_changes"] = r.lane_changes;
    row["mean_speed"] = r.mean_speed;
    row["steps_survived"] = r.steps_survived;
    row["collided_at"] = r.collided_at ? ojson(*r.collided_at) : ojson(nullptr);
    rows.push_back(row);
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "seed,success,lane_changes,mean_speed\n";
  for (const EpisodeResult& r : report.rows) {
    os << r.seed << ',' << (r.success ? 1 : 0) << ',' << r.lane_changes << ','
       << format_float_repr(r.mean_speed) << '\n';
  }
  const Aggregates& a = report.aggregates;
  os << "\nmetric,value\n";
  os << "episodes," << report.episodes << '\n';
  os << "success_rate," << format_float_repr(a.success_rate) << '\n';
  os << "lane_change_score," << format_float_repr(a.lane_change_score) << '\n';
  os << "mean_speed," << format_float_repr(a.mean_speed) << '\n';
  os << "speed_score," << format_float_repr(a.speed_score) << '\n';
  return os.str();
}

MetricsReport report_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("report is not valid JSON");
  MetricsReport r;
  try {
    r.schema = j.at("schema").get<std::string>();
    if (r.schema.rfind("shwy.metrics/", 0) != 0) {
      throw FormatError("not a metrics report (schema '" + r.schema + "')");
    }
    r.env = j.at("env").get<std::string>();
    const auto& p = j.at("policy");
    const auto kind = policy_kind_from_name(p.at("kind").get<std::string>());
    const auto shaping = shaping_from_name(p.at("shaping").get<std::string>());
    if (!kind || !shaping) throw FormatError("unknown policy kind or shaping scheme in report");
    r.policy.kind = *kind;
    r.policy.shaping = ShapingScheme{*shaping, p.at("lambda").get<double>()};
    r.policy.scorer = p.at("scorer").get<std::string>();
    r.policy.training_steps = p.at("training_steps").get<std::int64_t>();
    r.policy.trained_on = p.at("trained_on").get<std::string>();
    r.episodes = j.at("episodes").get<int>();
    r.horizon_steps = j.at("horizon_steps").get<int>();
    r.v_min = j.at("v_min").get<double>();
    r.v_max = j.at("v_max").get<double>();
    const auto& a = j.at("aggregates");
    r.aggregates.success_rate = a.at("success_rate").get<double>();
    r.aggregates.lane_change_score = a.at("lane_change_score").get<double>();
    r.aggregates.mean_speed = a.at("mean_speed").get<double>();
    r.aggregates.speed_score = a.at("speed_score").get<double>();
    if (j.contains("llm_counters")) {
      const auto& c = j.at("llm_counters");
      r.llm_counters = DecisionCounters{
          c.at("decisions").get<std::uint64_t>(), c.at("backend_calls").get<std::uint64_t>(),
          c.at("fallbacks").get<std::uint64_t>(), c.at("parse_failures").get<std::uint64_t>(),
          c.at("transport_failures").get<std::uint64_t>()};
    }
    for (const auto& row : j.at("rows")) {
      EpisodeResult e;
      e.seed = row.at("seed").get<std::uint64_t>();
      e.success = row.at("success").get<bool>();
      e.lane_changes = row.at("lane_changes").get<int>();
      e.mean_speed = row.at("mean_speed").get<double>();
      e.steps_survived = row.at("steps_survived").get<int>();
      if (!row.at("collided_at").is_null()) e.collided_at = row.at("collided_at").get<int>();
      r.rows.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
  if (static_cast<int>(r.rows.size()) != r.episodes) {
    throw FormatError("report lists " + std::to_string(r.rows.size()) + " rows for " +
                      std::to_string(r.episodes) + " episodes");
  }
  return r;
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_report(const MetricsReport& report, const std::string& path, ReportFormat format) {
  write_text_file(path, format == ReportFormat::kJson ? report_to_json(report)
                                                       : report_to_csv(report));
}

MetricsReport load_report(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return report_from_json(text);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Comparison tables

std::vector<ComparisonRow> compare(const std::vector<MetricsReport>& reports) {
  if (reports.size() < 2) throw ConfigError("compare needs at least two reports");
  for (const MetricsReport& r : reports) {
    if (r.schema != kMetricsSchema) {
      throw FormatError("cannot compare report schema '" + r.schema + "' (expected '" +
                        std::string(kMetricsSchema) + "')");
    }
  }
  std::vector<ComparisonRow> rows;
  for (const MetricsReport& r : reports) {
    rows.push_back(ComparisonRow{r.env, policy_label(r.policy), r.policy.training_steps,
                                 r.aggregates});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.env != b.env) return a.env < b.env;
    return a.steps < b.steps;
  });
  return rows;
}

std::string comparison_to_text(const std::vector<ComparisonRow>& rows) {
  std::size_t env_w = 3;
  std::size_t policy_w = 6;
  for (const ComparisonRow& r : rows) {
    env_w = std::max(env_w, r.env.size());
    policy_w = std::max(policy_w, r.policy.size());
  }
  std::string out;
  char line[512];
  std::snprintf(line, sizeof line, "%-*s  %-*s  %7s  %7s  %7s  %6s\n", static_cast<int>(env_w),
                "Env", static_cast<int>(policy_w), "Policy", "Steps", "SR (%)", "Avg LC", "Speed");
  out += line;
  for (const ComparisonRow& r : rows) {
    std::snprintf(line, sizeof line, "%-*s  %-*s  %7lld  %7.1f  %7.2f  %6.2f\n",
                  static_cast<int>(env_w), r.env.c_str(), static_cast<int>(policy_w),
                  r.policy.c_str(), static_cast<long long>(r.steps), r.aggregates.success_rate,
                  r.aggregates.lane_change_score, r.aggregates.speed_score);
    out += line;
  }
  return out;
}

std::string comparison_to_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os << "env,policy,steps,sr,avg_lc,speed\n";
  for (const ComparisonRow& r : rows) {
    os << r.env << ',' << r.policy << ',' << r.steps << ','
       << format_float_repr(r.aggregates.success_rate) << ','
       << format_float_repr(r.aggregates.lane_change_score) << ','
       << format_float_repr(r.aggregates.speed_score) << '\n';
  }
  return os.str();
}

}  // namespace shwy
