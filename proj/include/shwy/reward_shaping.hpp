#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace shwy {

// Weights of the environment reward a*speed_term - b*collision.
struct RewardWeights {
  double a = 0.4;
  double b = 1.0;
  double v_min = 20.0;
  double v_max = 30.0;

  void validate() const;
  bool operator==(const RewardWeights&) const = default;
};

enum class ShapingKind { kNone, kDense, kAveraged, kCentered };

struct ShapingScheme {
  ShapingKind kind = ShapingKind::kNone;
  double lambda = 1.0;  // only used by kDense

  static ShapingScheme none() { return {ShapingKind::kNone, 1.0}; }
  static ShapingScheme dense(double lambda = 1.0) { return {ShapingKind::kDense, lambda}; }
  static ShapingScheme averaged() { return {ShapingKind::kAveraged, 1.0}; }
  static ShapingScheme centered() { return {ShapingKind::kCentered, 1.0}; }

  bool uses_scores() const { return kind != ShapingKind::kNone; }
  // Closed range of total rewards for in-range inputs.
  double lower_bound() const { return 0.0; }
  double upper_bound() const { return kind == ShapingKind::kDense ? 1.0 + lambda : 1.0; }
  void validate() const;
  bool operator==(const ShapingScheme&) const = default;
};

// "none", "dense", "averaged", "centered".
std::string_view shaping_name(ShapingKind kind);
std::optional<ShapingKind> shaping_from_name(std::string_view name);
// Human label such as "dense(lambda=1)".
std::string describe(const ShapingScheme& scheme);

struct RewardBreakdown {
  double env_reward = 0.0;
  std::optional<double> llm_score_norm;  // absent for ShapingKind::kNone
  double total = 0.0;
};

// a*clip((v - v_min)/(v_max - v_min), 0, 1) - b*1{collision}, renormalised
// from [-b, a] onto [0, 1].
double env_reward(double ego_speed, bool collided, const RewardWeights& weights);

// Raw 0-10 score -> [0, 1]. Throws ConfigError outside [0, 10].
double normalize_score(double raw);

double shape_dense(double r, double s, double lambda);
double shape_averaged(double r, double s);
double shape_centered(double r, double s);

// Composes an environment reward with a normalised score (ignored for kNone).
RewardBreakdown compose_reward(const ShapingScheme& scheme, double env, std::optional<double> score_norm);

}  // namespace shwy
