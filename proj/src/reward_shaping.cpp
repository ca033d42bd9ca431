#include "shwy/reward_shaping.hpp"

#include <algorithm>
#include <array>
#include <cstdio>

#include "shwy/errors.hpp"

namespace shwy {

namespace {
constexpr std::array<std::string_view, 4> kShapingNames = {"none", "dense", "averaged", "centered"};
}  // namespace

void RewardWeights::validate() const {
  if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("reward weights a and b must be positive");
  if (!(v_min < v_max)) throw ConfigError("reward v_min must be below v_max");
}

void ShapingScheme::validate() const {
  if (kind == ShapingKind::kDense && !(lambda > 0.0)) {
    throw ConfigError("dense shaping requires lambda > 0");
  }
}

std::string_view shaping_name(ShapingKind kind) {
  return kShapingNames.at(static_cast<std::size_t>(kind));
}

std::optional<ShapingKind> shaping_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kShapingNames.size(); ++i) {
    if (kShapingNames[i] == name) return static_cast<ShapingKind>(i);
  }
  return std::nullopt;
}

std::string describe(const ShapingScheme& scheme) {
  if (scheme.kind != ShapingKind::kDense) return std::string(shaping_name(scheme.kind));
  char buf[64];
  std::snprintf(buf, sizeof buf, "dense(lambda=%g)", scheme.lambda);
  return buf;
}

double env_reward(double ego_speed, bool collided, const RewardWeights& w) {
  const double speed_term = std::clamp((ego_speed - w.v_min) / (w.v_max - w.v_min), 0.0, 1.0);
  const double raw = w.a * speed_term - (collided ? w.b : 0.0);
  return (raw + w.b) / (w.a + w.b);
}

double normalize_score(double raw) {
  if (!(raw >= 0.0 && raw <= 10.0)) {
    throw ConfigError("normalize_score: raw score outside [0, 10]");
  }
  return 0.1 * raw;
}

double shape_dense(double r, double s, double lambda) { return r + lambda * s; }

double shape_averaged(double r, double s) { return 0.5 * r + 0.5 * s; }

double shape_centered(double r, double s) {
  const double centered = s - 0.5;
  const double raw = r + centered;  // [-0.5, 1.5]
  return (raw + 0.5) / 2.0;
}

RewardBreakdown compose_reward(const ShapingScheme& scheme, double env,
                               std::optional<double> score_norm) {
  RewardBreakdown out;
  out.env_reward = env;
  if (scheme.kind == ShapingKind::kNone) {
    out.total = env;
    return out;
  }
  if (!score_norm) throw ContractError("compose_reward: shaping scheme requires a score");
  out.llm_score_norm = score_norm;
  switch (scheme.kind) {
    case ShapingKind::kDense:
      out.total = shape_dense(env, *score_norm, scheme.lambda);
      break;
    case ShapingKind::kAveraged:
      out.total = shape_averaged(env, *score_norm);
      break;
    case ShapingKind::kCentered:
      out.total = shape_centered(env, *score_norm);
      break;
    case ShapingKind::kNone:
      break;
  }
  return out;
}

}  // namespace shwy
