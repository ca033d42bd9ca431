#include "shwy/observation.hpp"

#include <algorithm>

namespace shwy {

double lane_ttc(const SimState& state, int lane) {
  const ScenarioConfig& config = state.config;
  if (lane < 0 || lane >= config.lane_count) return 0.0;
  const VehicleState& ego = state.ego;

  const VehicleState* leader = nullptr;
  double leader_gap = 0.0;
  for (const VehicleState& v : state.traffic) {
    if (v.lane_index != lane) continue;
    const double gap = bumper_gap(ego, v);
    if (gap <= 0.0) continue;  // behind or alongside
    if (!leader || gap < leader_gap) {
      leader = &v;
      leader_gap = gap;
    }
  }
  if (!leader) return config.ttc_cap;
  const double closure = ego.speed - leader->speed;
  if (closure <= 0.0) return config.ttc_cap;
  return std::clamp(leader_gap / closure, 0.0, config.ttc_cap);
}

Observation extract_observation(const SimState& state) {
  const int lane = state.ego.lane_index;
  return Observation{state.ego.speed, lane_ttc(state, lane - 1), lane_ttc(state, lane),
                     lane_ttc(state, lane + 1)};
}

}  // namespace shwy
