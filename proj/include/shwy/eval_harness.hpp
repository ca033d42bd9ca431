#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shwy/policies.hpp"
#include "shwy/sim_core.hpp"

namespace shwy {

inline constexpr std::string_view kMetricsSchema = "shwy.metrics/1";

struct EpisodeResult {
  std::uint64_t seed = 0;
  bool success = false;
  int lane_changes = 0;     // completed ego lane-index transitions
  double mean_speed = 0.0;  // m/s over executed substeps
  int steps_survived = 0;   // policy steps completed without collision
  std::optional<int> collided_at;  // 0-based policy step of the collision
  bool operator==(const EpisodeResult&) const = default;
};

struct Aggregates {
  double success_rate = 0.0;       // percent
  double lane_change_score = 0.0;  // mean lane changes per episode
  double mean_speed = 0.0;         // m/s
  double speed_score = 0.0;        // clip((mean_speed - v_min)/(v_max - v_min), 0, 1)
  bool operator==(const Aggregates&) const = default;
};

struct MetricsReport {
  std::string schema{kMetricsSchema};
  std::string env;
  PolicyMetadata policy;
  int episodes = 0;
  int horizon_steps = 0;
  double v_min = 20.0;
  double v_max = 30.0;
  Aggregates aggregates;
  std::vector<EpisodeResult> rows;  // ordered by seed
  std::optional<DecisionCounters> llm_counters;  // LLM-only runs
};

double speed_score(double mean_speed, double v_min, double v_max);

// Plain sums in row order.
Aggregates compute_aggregates(const std::vector<EpisodeResult>& rows, double v_min, double v_max);

// Resets with `seed` and runs until collision or horizon.
EpisodeResult run_episode(Policy& policy, const ScenarioConfig& config, std::uint64_t seed);

// Seeds 0..episodes-1. With jobs > 1 episodes run on a thread pool; rows
// are always assembled in seed order.
MetricsReport evaluate(Policy& policy, const ScenarioConfig& config, int episodes, int jobs = 1);

enum class ReportFormat { kJson, kCsv };

std::string report_to_json(const MetricsReport& report);
std::string report_to_csv(const MetricsReport& report);
// Throws FormatError for unknown schema versions or malformed documents.
MetricsReport report_from_json(const std::string& text);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

void write_report(const MetricsReport& report, const std::string& path, ReportFormat format);
MetricsReport load_report(const std::string& path);

struct ComparisonRow {
  std::string env;
  std::string policy;  // e.g. "rl", "hybrid dense(lambda=1)", "llm mock-conservative"
  std::int64_t steps = 0;
  Aggregates aggregates;
};

// Rows stably sorted by (env, steps). Needs at least two reports sharing
// one schema version.
std::vector<ComparisonRow> compare(const std::vector<MetricsReport>& reports);
std::string comparison_to_text(const std::vector<ComparisonRow>& rows);
std::string comparison_to_csv(const std::vector<ComparisonRow>& rows);

}  // namespace shwy
