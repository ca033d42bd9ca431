#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "shwy/random.hpp"

namespace shwy {

// The five discrete meta-actions. Integer codes are part of the prompt,
// policy and persistence contracts.
enum class MetaAction : int {
  kLaneLeft = 0,
  kIdle = 1,
  kLaneRight = 2,
  kFaster = 3,
  kSlower = 4,
};

inline constexpr int kNumActions = 5;

constexpr int action_code(MetaAction a) { return static_cast<int>(a); }
std::optional<MetaAction> action_from_code(int code);
// "LANE_LEFT", "IDLE", "LANE_RIGHT", "FASTER", "SLOWER".
std::string_view action_name(MetaAction a);
std::optional<MetaAction> action_from_name(std::string_view name);

enum class ScenarioKind { kHighway, kHighwayFast, kMerge };

// "highway", "highway-fast", "merge".
std::string_view scenario_name(ScenarioKind kind);
std::optional<ScenarioKind> scenario_from_name(std::string_view name);

inline constexpr double kNoLeaderGap = std::numeric_limits<double>::infinity();

struct IdmParams {
  double a_max = 3.0;         // m/s^2
  double b_comf = 2.0;        // m/s^2
  double s0 = 10.0;           // m, minimum bumper-to-bumper gap
  double time_headway = 1.5;  // s
  double delta = 4.0;
  double b_hard = 8.0;  // m/s^2, lower clamp on the returned acceleration

  bool operator==(const IdmParams&) const = default;
};

struct MobilParams {
  double politeness = 0.0;
  double a_threshold = 0.2;  // m/s^2
  double b_safe = 2.0;       // m/s^2, max deceleration imposed on the new follower

  bool operator==(const MobilParams&) const = default;
};

struct TrafficModelParams {
  IdmParams idm;
  MobilParams mobil;

  void validate() const;
  bool operator==(const TrafficModelParams&) const = default;
};

// The on-ramp of the merge scenario. The ramp runs alongside the rightmost
// main lane over [junction - ramp_length, junction]; ramp vehicles must
// leave it by the junction.
struct MergeRamp {
  double ramp_length = 150.0;
  double junction_position = 320.0;
  int ramp_vehicles = 1;  // 0 or 1

  bool operator==(const MergeRamp&) const = default;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::kHighway;
  int lane_count = 4;
  int traffic_count = 40;
  int horizon_steps = 40;
  int policy_hz = 1;
  int sim_hz = 15;
  double v_min = 20.0;
  double v_max = 30.0;
  // Mean centre-to-centre spacing of consecutive spawned vehicles in a lane.
  // Spacings are drawn from U(m, 2*mean - m) with m = min_spawn_spacing().
  double spawn_spacing_mean = 75.0;
  std::optional<MergeRamp> merge_ramp;

  std::vector<double> speed_grid{20.0, 25.0, 30.0};
  double lane_width = 4.0;
  double vehicle_length = 5.0;
  double vehicle_width = 2.0;
  // Desired speeds sit just above the ego's start speed, so cruising is
  // mostly safe and speeding up is not.
  double traffic_speed_min = 26.0;
  double traffic_speed_max = 30.0;
  // Distance behind the ego from which side-lane traffic is spawned.
  double spawn_behind = 60.0;
  int ego_start_lane = 2;
  double ego_start_speed = 25.0;
  double ego_speed_gain = 1.0 / 0.6;  // 1/s, proportional speed controller
  double lane_change_time = 1.5;      // s, ~95% of the lateral move
  double ttc_cap = 10.0;              // s
  bool respawn_overtaken = false;
  double respawn_distance = 100.0;  // m behind the ego
  TrafficModelParams traffic;

  static ScenarioConfig defaults(ScenarioKind kind);

  void validate() const;
  // vehicle_length + s0 + T * max(traffic_speed_max, ego_start_speed): the
  // IDM desired gap at the fastest spawn speed, so traffic starts unjammed.
  double min_spawn_spacing() const;
  int substeps_per_step() const { return sim_hz / policy_hz; }
  double dt() const { return 1.0 / sim_hz; }
  // Lane index reserved for the merge ramp (one past the last main lane).
  int ramp_lane() const { return lane_count; }
  double lane_center(int lane) const { return lane_width * (lane + 0.5); }
  // Nearest lane centre to a lateral position, including the ramp for merge.
  int nearest_lane(double lateral) const;

  bool operator==(const ScenarioConfig&) const = default;
};

struct VehicleState {
  int id = 0;
  double longitudinal_pos = 0.0;  // m along the road (centre of the vehicle)
  double lateral_pos = 0.0;       // m from the left road edge
  int lane_index = 0;
  double speed = 0.0;
  double target_speed = 0.0;  // IDM desired speed for traffic, set-point for ego
  int target_lane = 0;
  double length = 5.0;
  double width = 2.0;
  bool is_ego = false;

  bool operator==(const VehicleState&) const = default;
};

struct SimState {
  ScenarioConfig config;
  VehicleState ego;
  std::vector<VehicleState> traffic;
  double time_s = 0.0;
  int step_count = 0;
  bool collided = false;
  // Traffic-traffic contacts observed so far; logged, never terminal.
  std::uint64_t traffic_contacts = 0;
  int next_vehicle_id = 0;
  Engine rng;

  bool done() const { return collided || step_count >= config.horizon_steps; }
  bool operator==(const SimState&) const = default;
};

struct StepInfo {
  bool collided_now = false;
  bool ego_lane_changed = false;
  int lane_changes = 0;  // completed ego lane-index transitions this step
  double ego_speed_after = 0.0;
  double speed_sum = 0.0;  // sum of ego speed over executed substeps
  int substeps = 0;
  std::uint64_t traffic_contacts = 0;
};

SimState reset(const ScenarioConfig& config, std::uint64_t seed);

// Applies one meta-action and advances sim_hz/policy_hz physics substeps in place.
StepInfo advance(SimState& state, MetaAction action);

// Value-semantics form of advance().
std::pair<SimState, StepInfo> step(SimState state, MetaAction action);

// Intelligent Driver Model acceleration, clamped to [-b_hard, a_max].
// gap is bumper-to-bumper; pass kNoLeaderGap when there is no leader.
double idm_acceleration(double v, double v_lead, double gap, double desired_speed,
                        const IdmParams& params);

// MOBIL lane-change proposal for a main-road vehicle. neighbors may contain
// the vehicle itself (matched by id) and is searched for leaders/followers.
std::optional<int> mobil_lane_change(const VehicleState& vehicle,
                                     std::span<const VehicleState> neighbors, int lane_count,
                                     const TrafficModelParams& params);

bool boxes_overlap(const VehicleState& a, const VehicleState& b);
bool check_collision(const SimState& state);

// Bumper-to-bumper gap from `rear` to `front` (negative when overlapping).
inline double bumper_gap(const VehicleState& rear, const VehicleState& front) {
  return front.longitudinal_pos - rear.longitudinal_pos - 0.5 * (front.length + rear.length);
}

}  // namespace shwy
