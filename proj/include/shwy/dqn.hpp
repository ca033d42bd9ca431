#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shwy/llm_bridge.hpp"
#include "shwy/observation.hpp"
#include "shwy/random.hpp"
#include "shwy/reward_shaping.hpp"
#include "shwy/sim_core.hpp"

namespace shwy {

using ActionValues = std::array<double, kNumActions>;

// Fully connected layer. weight is row-major [in][out] so that the inner
// loop of both the forward pass and the weight gradient runs over outputs.
struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  double& w(int i, int j) { return weight[static_cast<std::size_t>(i) * out + j]; }
  double w(int i, int j) const { return weight[static_cast<std::size_t>(i) * out + j]; }
  bool operator==(const DenseLayer&) const = default;
};

// MLP with ReLU on hidden layers and a linear output. Observations are
// multiplied element-wise by input_scale before the first layer; the scale
// vector is stored in the model file.
class QNetwork {
 public:
  QNetwork() = default;
  // Zero-initialised network with the given layer widths (input first).
  QNetwork(const std::vector<int>& sizes, std::vector<double> input_scale);

  // 4 -> hidden... -> 5 with input scale [1/30, 1/ttc_cap x3].
  static QNetwork for_observations(const std::vector<int>& hidden, double ttc_cap);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights then biases, layer
  // by layer, drawn in storage order.
  void init_uniform(Engine& rng);

  // Scales, then evaluates. Throws ConfigError on non-finite input.
  std::vector<double> forward(std::span<const double> observation) const;
  ActionValues action_values(const Observation& obs) const;

  std::vector<int> sizes() const;
  const std::vector<double>& input_scale() const { return input_scale_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  bool operator==(const QNetwork&) const = default;

 private:
  std::vector<DenseLayer> layers_;
  std::vector<double> input_scale_;
};

// Lowest index wins ties.
MetaAction greedy_action(const ActionValues& values);

// Epsilon-greedy: one uniform draw decides exploration (skipped when
// epsilon is 0), a second picks the random action.
MetaAction select_action(const ActionValues& values, double epsilon, Engine& rng);

struct Transition {
  std::array<double, kObservationSize> obs{};
  int action = 0;
  double reward = 0.0;
  std::array<double, kObservationSize> next_obs{};
  bool done = false;
  bool operator==(const Transition&) const = default;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  // Overwrites the oldest transition once full.
  void add(const Transition& t);
  // batch_size indices drawn uniformly with replacement.
  std::vector<Transition> sample(std::size_t batch_size, Engine& rng) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return storage_.size(); }
  std::uint64_t total_added() const { return total_added_; }
  // i-th transition from oldest (0) to newest (size()-1).
  const Transition& at(std::size_t i) const;

 private:
  std::vector<Transition> storage_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
  std::uint64_t total_added_ = 0;
};

enum class LossKind { kMse, kHuber };
enum class OptimizerKind { kAdam, kSgd };

std::string_view loss_name(LossKind kind);
std::optional<LossKind> loss_from_name(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);
std::optional<OptimizerKind> optimizer_from_name(std::string_view name);

// Same layout as the network's layers.
struct Gradients {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const QNetwork& net);
  double global_norm() const;
  void scale(double factor);
};

struct LossAndGradient {
  double loss = 0.0;
  Gradients grad;
};

// Mean TD loss over the batch against y = r + gamma * (1 - done) * max Q_target(s').
// Huber uses delta = 1.
double td_loss(const QNetwork& online, const QNetwork& target, std::span<const Transition> batch,
               double gamma, LossKind loss);
LossAndGradient td_loss_and_gradient(const QNetwork& online, const QNetwork& target,
                                     std::span<const Transition> batch, double gamma,
                                     LossKind loss);

// Adam as w -= lr * m_hat / (sqrt(v_hat) + eps); SGD as w -= lr * g.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
            double epsilon = 1e-8);
  void apply(QNetwork& net, const Gradients& grad);
  std::uint64_t steps() const { return steps_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::uint64_t steps_ = 0;
  Gradients m_;
  Gradients v_;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double gamma = 0.98;
  int batch_size = 64;
  int learning_starts = 1000;
  int train_freq = 4;
  int gradient_steps = 4;
  int target_update_interval = 1000;
  int total_steps = 20000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double exploration_fraction = 0.1;
  std::uint64_t seed = 42;
  int buffer_size = 50000;
  std::vector<int> hidden{256, 256};
  OptimizerKind optimizer = OptimizerKind::kAdam;
  LossKind loss = LossKind::kMse;
  double max_grad_norm = 10.0;  // 0 disables clipping
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  RewardWeights reward;
  ShapingScheme shaping;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Linear decay from epsilon_start to epsilon_end over the first
// exploration_fraction * total_steps env steps, constant afterwards.
double epsilon_at(std::int64_t step, const TrainConfig& config);

// Seeds of the independent generator streams derived from TrainConfig::seed.
struct TrainStreams {
  static std::uint64_t init(std::uint64_t seed) { return mix_seed(seed, 1); }
  static std::uint64_t explore(std::uint64_t seed) { return mix_seed(seed, 2); }
  static std::uint64_t replay(std::uint64_t seed) { return mix_seed(seed, 3); }
  static std::uint64_t episode(std::uint64_t seed, std::uint64_t index) {
    return mix_seed(mix_seed(seed, 4), index);
  }
};

// Online/target network pair with optimizer state.
class DqnAgent {
 public:
  DqnAgent(const TrainConfig& config, QNetwork initial);

  // One gradient step on the batch; returns the mean loss.
  double train_step(std::span<const Transition> batch);
  void sync_target();

  const QNetwork& online() const { return online_; }
  const QNetwork& target() const { return target_; }
  std::uint64_t gradient_steps() const { return optimizer_.steps(); }
  std::uint64_t target_syncs() const { return target_syncs_; }

 private:
  TrainConfig config_;
  QNetwork online_;
  QNetwork target_;
  Optimizer optimizer_;
  std::uint64_t target_syncs_ = 0;
};

struct EpisodeLog {
  int index = 0;
  std::int64_t start_step = 0;
  int length = 0;
  double total_return = 0.0;  // sum of shaped rewards
  double env_return = 0.0;    // sum of environment rewards
  bool collided = false;
  double epsilon = 0.0;    // at the episode's last step
  double mean_loss = 0.0;  // over gradient steps taken during the episode (0 if none)
  int lane_changes = 0;
  double mean_speed = 0.0;
};

struct TrainLog {
  std::vector<EpisodeLog> episodes;
  std::vector<double> losses;  // one per gradient step
  std::int64_t env_steps = 0;
  std::uint64_t gradient_steps = 0;
  std::uint64_t target_syncs = 0;
  ScorerCounters scorer;

  // Per-episode CSV followed by a blank line and a counters block.
  std::string to_csv() const;
};

struct ModelMetadata {
  std::string scenario;
  ShapingScheme shaping;
  std::string scorer = "none";
  std::int64_t training_steps = 0;
  std::uint64_t seed = 0;
  bool operator==(const ModelMetadata&) const = default;
};

struct TrainResult {
  QNetwork model;
  ModelMetadata metadata;
  TrainLog log;
};

// Single-threaded epsilon-greedy DQN loop. Random actions are taken for
// the first learning_starts steps. After env step n, gradient_steps updates
// run when n % train_freq == 0 and n > learning_starts, and the target
// network syncs when n % target_update_interval == 0. Only a collision
// ends an episode as terminal; horizon cut-offs still bootstrap. The
// scorer is required iff the shaping scheme uses scores.
TrainResult train(const TrainConfig& config, const ScenarioConfig& scenario,
                  TransitionScorer* scorer);

// Called after every episode; lets callers report progress.
using EpisodeCallback = std::function<void(const EpisodeLog&, std::int64_t total_steps)>;
TrainResult train(const TrainConfig& config, const ScenarioConfig& scenario,
                  TransitionScorer* scorer, const EpisodeCallback& on_episode);

// Model file, little-endian:
//   "SHWY" | u32 version | u32 layer count L | u32 sizes[L+1]
//   | f64 input_scale[sizes[0]] | u32 n | n bytes of metadata JSON
//   | per layer: f64 weight[in*out] ([in][out]), f64 bias[out]
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string serialize_model(const QNetwork& net, const ModelMetadata& metadata);
// Throws FormatError on bad magic/version, truncation, trailing bytes or
// when the outer widths differ from 4 inputs / 5 outputs.
std::pair<QNetwork, ModelMetadata> deserialize_model(std::string_view bytes);

void save_model(const std::string& path, const QNetwork& net, const ModelMetadata& metadata);
std::pair<QNetwork, ModelMetadata> load_model(const std::string& path);

}  // namespace shwy
