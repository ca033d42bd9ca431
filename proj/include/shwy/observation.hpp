#pragma once

#include <array>

#include "shwy/sim_core.hpp"

namespace shwy {

inline constexpr int kObservationSize = 4;

// Ordering [ego speed, left TTC, centre TTC, right TTC] is a wire contract:
// prompts and the network input layer consume it verbatim.
struct Observation {
  double ego_speed = 0.0;   // m/s
  double ttc_left = 0.0;    // s
  double ttc_center = 0.0;  // s
  double ttc_right = 0.0;   // s

  std::array<double, kObservationSize> as_array() const {
    return {ego_speed, ttc_left, ttc_center, ttc_right};
  }
  bool operator==(const Observation&) const = default;
};

// Time to collision with the nearest vehicle strictly ahead of the ego in
// `lane`, clamped to [0, ttc_cap]. Returns ttc_cap when there is no leader
// or the gap is opening, and 0 for a lane that does not exist.
double lane_ttc(const SimState& state, int lane);

Observation extract_observation(const SimState& state);

}  // namespace shwy
