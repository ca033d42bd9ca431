#include "shwy/sim_core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "shwy/errors.hpp"

namespace shwy {

namespace {

constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "LANE_LEFT", "IDLE", "LANE_RIGHT", "FASTER", "SLOWER"};

constexpr std::array<std::string_view, 3> kScenarioNames = {"highway", "highway-fast", "merge"};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// Leader and follower of `vehicle` among vehicles matching `in_lane`.
// Ordering is by longitudinal position, ties broken by id.
struct LaneNeighbors {
  const VehicleState* leader = nullptr;
  const VehicleState* follower = nullptr;
};

bool is_ahead(const VehicleState& other, const VehicleState& self) {
  if (other.longitudinal_pos != self.longitudinal_pos) {
    return other.longitudinal_pos > self.longitudinal_pos;
  }
  return other.id > self.id;
}

template <typename Pred>
LaneNeighbors find_neighbors(const VehicleState& self, std::span<const VehicleState> vehicles,
                             Pred in_lane) {
  LaneNeighbors out;
  for (const VehicleState& other : vehicles) {
    if (other.id == self.id || !in_lane(other)) continue;
    if (is_ahead(other, self)) {
      if (!out.leader || is_ahead(*out.leader, other)) out.leader = &other;
    } else {
      if (!out.follower || is_ahead(other, *out.follower)) out.follower = &other;
    }
  }
  return out;
}

LaneNeighbors lane_neighbors(const VehicleState& self, std::span<const VehicleState> vehicles,
                             int lane) {
  return find_neighbors(self, vehicles, [lane](const VehicleState& v) { return v.lane_index == lane; });
}

// IDM response of `rear` to `front` (nullptr = free road). Overlapping
// vehicles get the hard-braking bound instead of an IDM evaluation.
double follow_accel(const VehicleState& rear, const VehicleState* front, const IdmParams& idm) {
  if (front == nullptr) {
    return idm_acceleration(rear.speed, 0.0, kNoLeaderGap, rear.target_speed, idm);
  }
  const double gap = bumper_gap(rear, *front);
  if (gap <= 0.0) return -idm.b_hard;
  return idm_acceleration(rear.speed, front->speed, gap, rear.target_speed, idm);
}

// Vehicles occupying or moving into either of `self`'s lanes.
const VehicleState* idm_leader(const VehicleState& self, std::span<const VehicleState> vehicles) {
  const int a = self.lane_index;
  const int b = self.target_lane;
  return find_neighbors(self, vehicles,
                        [a, b](const VehicleState& v) {
                          return v.lane_index == a || v.lane_index == b || v.target_lane == a ||
                                 v.target_lane == b;
                        })
      .leader;
}

double spawn_spacing(const ScenarioConfig& config, Engine& rng) {
  const double min_spacing = config.min_spawn_spacing();
  return uniform(rng, min_spacing, 2.0 * config.spawn_spacing_mean - min_spacing);
}

VehicleState make_vehicle(const ScenarioConfig& config, int id, int lane, double x,
                          double desired_speed) {
  VehicleState v;
  v.id = id;
  v.longitudinal_pos = x;
  v.lateral_pos = config.lane_center(lane);
  v.lane_index = lane;
  v.speed = desired_speed;
  v.target_speed = desired_speed;
  v.target_lane = lane;
  v.length = config.vehicle_length;
  v.width = config.vehicle_width;
  return v;
}

// Safe-gap test used for voluntary ramp merges.
bool merge_is_safe(const VehicleState& vehicle, std::span<const VehicleState> vehicles, int lane,
                   const TrafficModelParams& params) {
  const LaneNeighbors n = lane_neighbors(vehicle, vehicles, lane);
  if (n.leader && bumper_gap(vehicle, *n.leader) <= 0.0) return false;
  if (n.follower) {
    if (bumper_gap(*n.follower, vehicle) <= 0.0) return false;
    if (follow_accel(*n.follower, &vehicle, params.idm) < -params.mobil.b_safe) return false;
  }
  return true;
}

std::vector<VehicleState> all_vehicles(const SimState& state) {
  std::vector<VehicleState> all;
  all.reserve(state.traffic.size() + 1);
  all.push_back(state.ego);
  all.insert(all.end(), state.traffic.begin(), state.traffic.end());
  return all;
}

void plan_traffic_lane_changes(SimState& state) {
  const ScenarioConfig& config = state.config;
  const std::vector<VehicleState> snapshot = all_vehicles(state);
  for (VehicleState& v : state.traffic) {
    if (v.lane_index != v.target_lane) continue;  // mid-manoeuvre
    if (config.merge_ramp && v.lane_index == config.ramp_lane()) {
      const double ramp_start = config.merge_ramp->junction_position - config.merge_ramp->ramp_length;
      if (v.longitudinal_pos >= ramp_start &&
          merge_is_safe(v, snapshot, config.lane_count - 1, config.traffic)) {
        v.target_lane = config.lane_count - 1;
      }
      continue;
    }
    if (auto lane = mobil_lane_change(v, snapshot, config.lane_count, config.traffic)) {
      v.target_lane = *lane;
    }
  }
}

void respawn_overtaken(SimState& state) {
  const ScenarioConfig& config = state.config;
  for (VehicleState& v : state.traffic) {
    if (v.longitudinal_pos >= state.ego.longitudinal_pos - config.respawn_distance) continue;
    const int lane = static_cast<int>(uniform_index(state.rng, config.lane_count));
    double last = state.ego.longitudinal_pos;
    for (const VehicleState& other : state.traffic) {
      if (other.lane_index == lane || other.target_lane == lane) {
        last = std::max(last, other.longitudinal_pos);
      }
    }
    const double x = std::max(state.ego.longitudinal_pos + config.respawn_distance,
                              last + spawn_spacing(config, state.rng));
    const double speed = uniform(state.rng, config.traffic_speed_min, config.traffic_speed_max);
    v = make_vehicle(config, v.id, lane, x, speed);
  }
}

std::uint64_t count_traffic_contacts(const std::vector<VehicleState>& traffic) {
  std::uint64_t contacts = 0;
  for (std::size_t i = 0; i < traffic.size(); ++i) {
    for (std::size_t j = i + 1; j < traffic.size(); ++j) {
      if (boxes_overlap(traffic[i], traffic[j])) ++contacts;
    }
  }
  return contacts;
}

}  // namespace

std::optional<MetaAction> action_from_code(int code) {
  if (code < 0 || code >= kNumActions) return std::nullopt;
  return static_cast<MetaAction>(code);
}

std::string_view action_name(MetaAction a) { return kActionNames.at(action_code(a)); }

std::optional<MetaAction> action_from_name(std::string_view name) {
  for (int i = 0; i < kNumActions; ++i) {
    if (kActionNames[i] == name) return static_cast<MetaAction>(i);
  }
  return std::nullopt;
}

std::string_view scenario_name(ScenarioKind kind) {
  return kScenarioNames.at(static_cast<std::size_t>(kind));
}

std::optional<ScenarioKind> scenario_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kScenarioNames.size(); ++i) {
    if (kScenarioNames[i] == name) return static_cast<ScenarioKind>(i);
  }
  return std::nullopt;
}

void TrafficModelParams::validate() const {
  require(idm.a_max > 0 && idm.b_comf > 0 && idm.s0 > 0 && idm.time_headway > 0 &&
              idm.delta > 0 && idm.b_hard > 0,
          "IDM parameters must be strictly positive");
  require(mobil.politeness >= 0 && mobil.politeness <= 1, "MOBIL politeness must lie in [0, 1]");
  require(mobil.a_threshold > 0 && mobil.b_safe > 0,
          "MOBIL threshold and safe deceleration must be strictly positive");
}

ScenarioConfig ScenarioConfig::defaults(ScenarioKind kind) {
  ScenarioConfig c;
  c.kind = kind;
  switch (kind) {
    case ScenarioKind::kHighway:
      break;
    case ScenarioKind::kHighwayFast:
      c.traffic_count = 30;
      c.horizon_steps = 30;
      c.sim_hz = 5;
      c.spawn_spacing_mean = 65.0;
      break;
    case ScenarioKind::kMerge:
      c.lane_count = 2;
      c.traffic_count = 15;
      c.spawn_spacing_mean = 75.0;
      c.ego_start_lane = 1;
      c.merge_ramp = MergeRamp{};
      break;
  }
  return c;
}

void ScenarioConfig::validate() const {
  require(policy_hz > 0 && sim_hz > 0, "policy_hz and sim_hz must be positive");
  require(sim_hz % policy_hz == 0, "sim_hz must be an integer multiple of policy_hz");
  require(lane_count >= 2, "lane_count must be at least 2");
  require(traffic_count >= 0, "traffic_count must be non-negative");
  require(horizon_steps >= 1, "horizon_steps must be at least 1");
  require(v_min < v_max, "v_min must be below v_max");
  require((kind == ScenarioKind::kMerge) == merge_ramp.has_value(),
          "merge_ramp must be present exactly for the merge scenario");
  if (merge_ramp) {
    require(merge_ramp->ramp_length > 0, "ramp_length must be positive");
    require(merge_ramp->junction_position > 0, "junction_position must be positive");
    require(merge_ramp->ramp_vehicles == 0 || merge_ramp->ramp_vehicles == 1,
            "ramp_vehicles must be 0 or 1");
    require(merge_ramp->ramp_vehicles <= traffic_count,
            "ramp vehicles are part of traffic_count");
  }
  require(!speed_grid.empty() && std::is_sorted(speed_grid.begin(), speed_grid.end()),
          "speed_grid must be a non-empty ascending list");
  require(speed_grid.front() >= 0 && speed_grid.back() <= v_max + 2.0,
          "speed_grid must lie within [0, v_max + 2]");
  require(lane_width > 0 && vehicle_length > 0 && vehicle_width > 0,
          "lane and vehicle dimensions must be positive");
  require(vehicle_width < lane_width, "vehicle_width must be below lane_width");
  require(traffic_speed_min > 0 && traffic_speed_min <= traffic_speed_max,
          "traffic speed range must be positive and ordered");
  require(spawn_behind >= 0, "spawn_behind must be non-negative");
  require(ego_start_lane >= 0 && ego_start_lane < lane_count, "ego_start_lane out of range");
  require(ego_start_speed >= 0 && ego_start_speed <= v_max + 2.0,
          "ego_start_speed must lie within [0, v_max + 2]");
  require(ego_speed_gain > 0 && ego_speed_gain * dt() <= 1.0,
          "ego_speed_gain must be positive and at most sim_hz");
  require(lane_change_time > 0, "lane_change_time must be positive");
  require(ttc_cap > 0, "ttc_cap must be positive");
  require(respawn_distance > 0, "respawn_distance must be positive");
  traffic.validate();
  require(spawn_spacing_mean >= min_spawn_spacing(),
          "spawn_spacing_mean " + std::to_string(spawn_spacing_mean) +
              " m cannot fit vehicles at their safe gap (needs >= vehicle_length + s0 + "
              "time_headway * max(traffic_speed_max, ego_start_speed) = " +
              std::to_string(min_spawn_spacing()) + " m)");
}

double ScenarioConfig::min_spawn_spacing() const {
  return vehicle_length + traffic.idm.s0 +
         traffic.idm.time_headway * std::max(traffic_speed_max, ego_start_speed);
}

int ScenarioConfig::nearest_lane(double lateral) const {
  const int max_lane = merge_ramp ? ramp_lane() : lane_count - 1;
  int best = 0;
  double best_dist = std::abs(lateral - lane_center(0));
  for (int lane = 1; lane <= max_lane; ++lane) {
    const double d = std::abs(lateral - lane_center(lane));
    if (d < best_dist) {
      best = lane;
      best_dist = d;
    }
  }
  return best;
}

double idm_acceleration(double v, double v_lead, double gap, double desired_speed,
                        const IdmParams& p) {
  if (std::isnan(gap) || (gap <= 0.0)) {
    throw ContractError("idm_acceleration: non-positive gap " + std::to_string(gap) +
                        " (collision should have been detected first)");
  }
  double accel = p.a_max * (1.0 - std::pow(v / desired_speed, p.delta));
  if (std::isfinite(gap)) {
    const double s_star =
        p.s0 + v * p.time_headway + v * (v - v_lead) / (2.0 * std::sqrt(p.a_max * p.b_comf));
    accel -= p.a_max * (s_star / gap) * (s_star / gap);
  }
  return std::clamp(accel, -p.b_hard, p.a_max);
}

std::optional<int> mobil_lane_change(const VehicleState& vehicle,
                                     std::span<const VehicleState> neighbors, int lane_count,
                                     const TrafficModelParams& params) {
  const int current = vehicle.lane_index;
  if (current < 0 || current >= lane_count) return std::nullopt;
  const IdmParams& idm = params.idm;
  const MobilParams& mobil = params.mobil;

  const LaneNeighbors here = lane_neighbors(vehicle, neighbors, current);
  const double self_old = follow_accel(vehicle, here.leader, idm);
  double old_follower_delta = 0.0;
  if (here.follower) {
    old_follower_delta = follow_accel(*here.follower, here.leader, idm) -
                         follow_accel(*here.follower, &vehicle, idm);
  }

  std::optional<int> best;
  double best_gain = -std::numeric_limits<double>::infinity();
  for (const int candidate : {current - 1, current + 1}) {
    if (candidate < 0 || candidate >= lane_count) continue;
    const LaneNeighbors there = lane_neighbors(vehicle, neighbors, candidate);
    if (there.leader && bumper_gap(vehicle, *there.leader) <= 0.0) continue;
    double new_follower_delta = 0.0;
    if (there.follower) {
      if (bumper_gap(*there.follower, vehicle) <= 0.0) continue;
      const double imposed = follow_accel(*there.follower, &vehicle, idm);
      if (imposed < -mobil.b_safe) continue;
      new_follower_delta = imposed - follow_accel(*there.follower, there.leader, idm);
    }
    const double self_new = follow_accel(vehicle, there.leader, idm);
    const double gain =
        self_new - self_old + mobil.politeness * (new_follower_delta + old_follower_delta);
    if (gain > mobil.a_threshold && gain > best_gain) {
      best = candidate;
      best_gain = gain;
    }
  }
  return best;
}

bool boxes_overlap(const VehicleState& a, const VehicleState& b) {
  return std::abs(a.longitudinal_pos - b.longitudinal_pos) < 0.5 * (a.length + b.length) &&
         std::abs(a.lateral_pos - b.lateral_pos) < 0.5 * (a.width + b.width);
}

bool check_collision(const SimState& state) {
  return std::any_of(state.traffic.begin(), state.traffic.end(),
                     [&](const VehicleState& v) { return boxes_overlap(state.ego, v); });
}

SimState reset(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  SimState state;
  state.config = config;
  state.rng.seed(seed);

  VehicleState& ego = state.ego;
  ego = make_vehicle(config, state.next_vehicle_id++, config.ego_start_lane, 0.0,
                     config.ego_start_speed);
  ego.is_ego = true;

  const int ramp_count = config.merge_ramp ? config.merge_ramp->ramp_vehicles : 0;
  const int main_count = config.traffic_count - ramp_count;
  // Per-lane cursor: centre position of the last vehicle placed in that lane.
  std::vector<double> cursor(config.lane_count, -config.spawn_behind - config.vehicle_length);
  cursor[config.ego_start_lane] = ego.longitudinal_pos;

  state.traffic.reserve(config.traffic_count);
  for (int i = 0; i < main_count; ++i) {
    const int lane = static_cast<int>(uniform_index(state.rng, config.lane_count));
    const double x = cursor[lane] + spawn_spacing(config, state.rng);
    cursor[lane] = x;
    const double speed = uniform(state.rng, config.traffic_speed_min, config.traffic_speed_max);
    state.traffic.push_back(make_vehicle(config, state.next_vehicle_id++, lane, x, speed));
  }
  if (ramp_count > 0) {
    const MergeRamp& ramp = *config.merge_ramp;
    // Timed to reach the junction close to when the ego does.
    const double ego_arrival =
        ramp.junction_position / std::max(config.ego_start_speed, config.v_min);
    const double arrival = ego_arrival + uniform(state.rng, -1.5, 1.5);
    const double speed = uniform(state.rng, config.traffic_speed_min, config.traffic_speed_max);
    const double x = ramp.junction_position - speed * arrival;
    state.traffic.push_back(
        make_vehicle(config, state.next_vehicle_id++, config.ramp_lane(), x, speed));
  }
  return state;
}

StepInfo advance(SimState& state, MetaAction action) {
  if (state.collided) throw ContractError("step called on a collided episode");
  if (state.step_count >= state.config.horizon_steps) {
    throw ContractError("step called on an exhausted episode (horizon reached)");
  }
  const ScenarioConfig& config = state.config;
  VehicleState& ego = state.ego;

  // Meta-action -> ego set-points.
  const auto& grid = config.speed_grid;
  auto notch = static_cast<int>(std::min_element(grid.begin(), grid.end(),
                                                 [&](double a, double b) {
                                                   return std::abs(a - ego.target_speed) <
                                                          std::abs(b - ego.target_speed);
                                                 }) -
                                grid.begin());
  switch (action) {
    case MetaAction::kLaneLeft:
      ego.target_lane = std::max(ego.target_lane - 1, 0);
      break;
    case MetaAction::kLaneRight:
      ego.target_lane = std::min(ego.target_lane + 1, config.lane_count - 1);
      break;
    case MetaAction::kFaster:
      notch = std::min(notch + 1, static_cast<int>(grid.size()) - 1);
      ego.target_speed = grid[notch];
      break;
    case MetaAction::kSlower:
      notch = std::max(notch - 1, 0);
      ego.target_speed = grid[notch];
      break;
    case MetaAction::kIdle:
      break;
  }

  plan_traffic_lane_changes(state);

  StepInfo info;
  const double dt = config.dt();
  const double lateral_blend = 1.0 - std::exp(-dt * 3.0 / config.lane_change_time);
  const int substeps = config.substeps_per_step();
  std::vector<double> accel(state.traffic.size());

  for (int k = 0; k < substeps; ++k) {
    // Accelerations are computed from one snapshot, then integrated together.
    const std::vector<VehicleState> snapshot = all_vehicles(state);
    for (std::size_t i = 0; i < state.traffic.size(); ++i) {
      const VehicleState& v = state.traffic[i];
      accel[i] = follow_accel(v, idm_leader(v, snapshot), config.traffic.idm);
    }

    const double ego_accel = config.ego_speed_gain * (ego.target_speed - ego.speed);
    ego.longitudinal_pos += ego.speed * dt;
    ego.speed = std::max(0.0, ego.speed + ego_accel * dt);
    ego.lateral_pos += (config.lane_center(ego.target_lane) - ego.lateral_pos) * lateral_blend;
    const int ego_lane = config.nearest_lane(ego.lateral_pos);
    if (ego_lane != ego.lane_index) {
      ego.lane_index = ego_lane;
      ++info.lane_changes;
    }

    for (std::size_t i = 0; i < state.traffic.size(); ++i) {
      VehicleState& v = state.traffic[i];
      v.longitudinal_pos += v.speed * dt;
      v.speed = std::max(0.0, v.speed + accel[i] * dt);
      if (config.merge_ramp && v.lane_index == config.ramp_lane() &&
          v.longitudinal_pos >= config.merge_ramp->junction_position) {
        v.target_lane = config.lane_count - 1;  // ramp ends: forced merge
      }
      v.lateral_pos += (config.lane_center(v.target_lane) - v.lateral_pos) * lateral_blend;
      v.lane_index = config.nearest_lane(v.lateral_pos);
    }

    state.time_s += dt;
    info.speed_sum += ego.speed;
    ++info.substeps;
    const std::uint64_t contacts = count_traffic_contacts(state.traffic);
    info.traffic_contacts += contacts;
    state.traffic_contacts += contacts;
    if (check_collision(state)) {
      state.collided = true;
      info.collided_now = true;
      break;
    }
  }

  if (config.respawn_overtaken && !state.collided) respawn_overtaken(state);

  ++state.step_count;
  info.ego_lane_changed = info.lane_changes > 0;
  info.ego_speed_after = ego.speed;
  return info;
}

std::pair<SimState, StepInfo> step(SimState state, MetaAction action) {
  StepInfo info = advance(state, action);
  return {std::move(state), info};
}

}  // namespace shwy
