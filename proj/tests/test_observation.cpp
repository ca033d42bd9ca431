#include <doctest.h>

#include <algorithm>
#include <limits>

#include "shwy/observation.hpp"

using namespace shwy;

namespace {

SimState scene(int ego_lane = 1, double ego_speed = 25.0) {
  ScenarioConfig c = ScenarioConfig::defaults(ScenarioKind::kHighway);
  c.traffic_count = 0;
  c.ego_start_lane = ego_lane;
  c.ego_start_speed = ego_speed;
  SimState s = reset(c, 0);
  s.ego.longitudinal_pos = 100.0;
  return s;
}

// Leader placed so that the bumper gap to the ego equals `gap`.
void add_car(SimState& s, int lane, double gap, double speed) {
  VehicleState v;
  v.id = static_cast<int>(s.traffic.size()) + 100;
  v.lane_index = lane;
  v.target_lane = lane;
  v.lateral_pos = s.config.lane_center(lane);
  v.length = s.config.vehicle_length;
  v.width = s.config.vehicle_width;
  v.longitudinal_pos = s.ego.longitudinal_pos + gap + 0.5 * (v.length + s.ego.length);
  v.speed = speed;
  v.target_speed = speed;
  s.traffic.push_back(v);
}

// Brute force over every vehicle in the lane.
double ttc_oracle(const SimState& s, int lane) {
  if (lane < 0 || lane >= s.config.lane_count) return 0.0;
  double best_gap = std::numeric_limits<double>::infinity();
  double lead_speed = 0.0;
  for (const auto& v : s.traffic) {
    if (v.lane_index != lane) continue;
    const double gap = v.longitudinal_pos - s.ego.longitudinal_pos - 0.5 * (v.length + s.ego.length);
    if (gap > 0.0 && gap < best_gap) {
      best_gap = gap;
      lead_speed = v.speed;
    }
  }
  if (!std::isfinite(best_gap)) return s.config.ttc_cap;
  const double closing = s.ego.speed - lead_speed;
  if (closing <= 0.0) return s.config.ttc_cap;
  return std::min(best_gap / closing, s.config.ttc_cap);
}

}  // namespace

TEST_CASE("lane_ttc examples") {
  SimState s = scene(1, 25.0);
  add_car(s, 1, 50.0, 20.0);
  CHECK(lane_ttc(s, 1) == doctest::Approx(10.0));

  s = scene(1, 25.0);
  add_car(s, 1, 20.0, 27.0);
  CHECK(lane_ttc(s, 1) == 10.0);

  s = scene(1, 28.0);
  add_car(s, 1, 12.0, 22.0);
  CHECK(lane_ttc(s, 1) == doctest::Approx(12.0 / 6.0).epsilon(1e-12));

  CHECK(lane_ttc(s, -1) == 0.0);
  CHECK(lane_ttc(s, s.config.lane_count) == 0.0);
}

TEST_CASE("empty road observation is all caps") {
  const SimState s = scene(1, 25.0);
  const Observation o = extract_observation(s);
  CHECK(o == Observation{25.0, 10.0, 10.0, 10.0});
  const auto arr = o.as_array();
  CHECK(arr[0] == 25.0);
}

TEST_CASE("leftmost and rightmost lanes report zero beyond the edge") {
  const Observation left = extract_observation(scene(0));
  CHECK(left.ttc_left == 0.0);
  CHECK(left.ttc_right == 10.0);
  const Observation right = extract_observation(scene(3));
  CHECK(right.ttc_right == 0.0);
}

TEST_CASE("constructed scene matches the per-lane oracle") {
  SimState s = scene(1, 27.0);
  add_car(s, 0, 30.0, 21.0);
  add_car(s, 1, 40.0, 23.0);
  add_car(s, 1, 15.0, 26.0);
  add_car(s, 2, 8.0, 29.0);
  add_car(s, 2, -20.0, 30.0);  // behind
  const Observation o = extract_observation(s);
  CHECK(o.ego_speed == 27.0);
  CHECK(o.ttc_left == doctest::Approx(ttc_oracle(s, 0)).epsilon(1e-12));
  CHECK(o.ttc_center == doctest::Approx(ttc_oracle(s, 1)).epsilon(1e-12));
  CHECK(o.ttc_right == doctest::Approx(ttc_oracle(s, 2)).epsilon(1e-12));
  CHECK(o.ttc_left == doctest::Approx(5.0));
  CHECK(o.ttc_center == 10.0);  // nearest leader: 15 m at 1 m/s, capped
}

TEST_CASE("a vehicle alongside does not count as a leader") {
  SimState s = scene(1, 25.0);
  add_car(s, 1, -2.0, 10.0);  // overlapping longitudinally
  CHECK(lane_ttc(s, 1) == 10.0);
}

TEST_CASE("property: monotone in the gap, local, capped") {
  Engine rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const double ego_speed = uniform(rng, 20.0, 30.0);
    const double lead_speed = uniform(rng, 10.0, 30.0);
    double previous = std::numeric_limits<double>::infinity();
    for (double gap = 120.0; gap > 0.5; gap -= 3.7) {
      SimState s = scene(1, ego_speed);
      add_car(s, 1, gap, lead_speed);
      const double t = lane_ttc(s, 1);
      CHECK(t <= previous);
      CHECK(t >= 0.0);
      CHECK(t <= s.config.ttc_cap);
      previous = t;

      const Observation before = extract_observation(s);
      add_car(s, static_cast<int>(uniform_index(rng, 3)), -uniform(rng, 11.0, 80.0), uniform(rng, 0, 40));
      CHECK(extract_observation(s) == before);
    }
  }
}
