#include "shwy/dqn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "shwy/errors.hpp"

namespace shwy {

namespace {

// Activations of a batch: acts[0] holds the scaled inputs, acts[l] the
// output of layer l-1 (post-ReLU for hidden layers).
struct BatchPass {
  int batch = 0;
  std::vector<std::vector<double>> acts;
};

void layer_forward(const DenseLayer& layer, const double* in, int batch, double* out, bool relu) {
  const int n_out = layer.out;
  for (int b = 0; b < batch; ++b) {
    double* o = out + static_cast<std::size_t>(b) * n_out;
    std::copy(layer.bias.begin(), layer.bias.end(), o);
    const double* x = in + static_cast<std::size_t>(b) * layer.in;
    for (int i = 0; i < layer.in; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      const double* w = layer.weight.data() + static_cast<std::size_t>(i) * n_out;
      for (int j = 0; j < n_out; ++j) o[j] += xi * w[j];
    }
    if (relu) {
      for (int j = 0; j < n_out; ++j) o[j] = o[j] > 0.0 ? o[j] : 0.0;
    }
  }
}

void forward_batch(const QNetwork& net, const std::vector<double>& raw_inputs, int batch,
                   BatchPass& pass) {
  const auto& layers = net.layers();
  const auto& scale = net.input_scale();
  const std::size_t width = scale.size();
  pass.batch = batch;
  pass.acts.resize(layers.size() + 1);
  pass.acts[0].resize(static_cast<std::size_t>(batch) * width);
  for (std::size_t k = 0; k < pass.acts[0].size(); ++k) {
    pass.acts[0][k] = raw_inputs[k] * scale[k % width];
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    pass.acts[l + 1].resize(static_cast<std::size_t>(batch) * layers[l].out);
    layer_forward(layers[l], pass.acts[l].data(), batch, pass.acts[l + 1].data(),
                  l + 1 < layers.size());
  }
}

// Accumulates parameter gradients given dLoss/dOutput for every sample.
void backward_batch(const QNetwork& net, const BatchPass& pass, std::vector<double> delta,
                    Gradients& grad) {
  const auto& layers = net.layers();
  const int batch = pass.batch;
  std::vector<double> transposed;
  std::vector<double> delta_in;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    const std::vector<double>& input = pass.acts[l];
    double* gw = grad.weight[l].data();
    double* gb = grad.bias[l].data();
    for (int b = 0; b < batch; ++b) {
      const double* d = delta.data() + static_cast<std::size_t>(b) * layer.out;
      for (int j = 0; j < layer.out; ++j) gb[j] += d[j];
      const double* x = input.data() + static_cast<std::size_t>(b) * layer.in;
      for (int i = 0; i < layer.in; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        double* row = gw + static_cast<std::size_t>(i) * layer.out;
        for (int j = 0; j < layer.out; ++j) row[j] += xi * d[j];
      }
    }
    if (l == 0) break;

    // dX = delta * W^T through a transposed copy so the inner loop is an axpy.
    transposed.resize(layer.weight.size());
    for (int i = 0; i < layer.in; ++i) {
      for (int j = 0; j < layer.out; ++j) {
        transposed[static_cast<std::size_t>(j) * layer.in + i] = layer.w(i, j);
      }
    }
    delta_in.assign(static_cast<std::size_t>(batch) * layer.in, 0.0);
    for (int b = 0; b < batch; ++b) {
      const double* d = delta.data() + static_cast<std::size_t>(b) * layer.out;
      double* di = delta_in.data() + static_cast<std::size_t>(b) * layer.in;
      for (int j = 0; j < layer.out; ++j) {
        const double dj = d[j];
        if (dj == 0.0) continue;
        const double* wt = transposed.data() + static_cast<std::size_t>(j) * layer.in;
        for (int i = 0; i < layer.in; ++i) di[i] += dj * wt[i];
      }
      const double* x = input.data() + static_cast<std::size_t>(b) * layer.in;
      for (int i = 0; i < layer.in; ++i) {
        if (!(x[i] > 0.0)) di[i] = 0.0;  // ReLU'
      }
    }
    delta.swap(delta_in);
  }
}

std::vector<double> stack_obs(std::span<const Transition> batch, bool next) {
  std::vector<double> out;
  out.reserve(batch.size() * kObservationSize);
  for (const Transition& t : batch) {
    const auto& o = next ? t.next_obs : t.obs;
    out.insert(out.end(), o.begin(), o.end());
  }
  return out;
}

std::vector<double> td_targets(const QNetwork& target, std::span<const Transition> batch,
                               double gamma) {
  BatchPass pass;
  forward_batch(target, stack_obs(batch, true), static_cast<int>(batch.size()), pass);
  const std::vector<double>& q_next = pass.acts.back();
  std::vector<double> y(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const double* q = q_next.data() + b * kNumActions;
    const double best = *std::max_element(q, q + kNumActions);
    y[b] = batch[b].reward + (batch[b].done ? 0.0 : gamma * best);
  }
  return y;
}

double element_loss(double diff, LossKind kind) {
  if (kind == LossKind::kMse) return diff * diff;
  const double a = std::abs(diff);
  return a < 1.0 ? 0.5 * diff * diff : a - 0.5;
}

double element_grad(double diff, LossKind kind) {
  if (kind == LossKind::kMse) return 2.0 * diff;
  if (diff > 1.0) return 1.0;
  if (diff < -1.0) return -1.0;
  return diff;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// Little-endian byte writer/reader for the model format.
class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(std::string("model file truncated while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    }
    pos_ += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    }
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    const std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kMaxLayers = 16;
constexpr std::uint32_t kMaxWidth = 1u << 16;

}  // namespace

// ---------------------------------------------------------------------------
// QNetwork

QNetwork::QNetwork(const std::vector<int>& sizes, std::vector<double> input_scale)
    : input_scale_(std::move(input_scale)) {
  require(sizes.size() >= 2, "a network needs at least an input and an output width");
  for (int s : sizes) require(s > 0, "layer widths must be positive");
  require(input_scale_.size() == static_cast<std::size_t>(sizes.front()),
          "input_scale must match the input width");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    DenseLayer layer;
    layer.in = sizes[l];
    layer.out = sizes[l + 1];
    layer.weight.assign(static_cast<std::size_t>(layer.in) * layer.out, 0.0);
    layer.bias.assign(layer.out, 0.0);
    layers_.push_back(std::move(layer));
  }
}

QNetwork QNetwork::for_observations(const std::vector<int>& hidden, double ttc_cap) {
  require(ttc_cap > 0.0, "ttc_cap must be positive");
  std::vector<int> sizes{kObservationSize};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(kNumActions);
  return QNetwork(sizes, {1.0 / 30.0, 1.0 / ttc_cap, 1.0 / ttc_cap, 1.0 / ttc_cap});
}

void QNetwork::init_uniform(Engine& rng) {
  for (DenseLayer& layer : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (double& w : layer.weight) w = uniform(rng, -bound, bound);
    for (double& b : layer.bias) b = uniform(rng, -bound, bound);
  }
}

std::vector<double> QNetwork::forward(std::span<const double> observation) const {
  if (layers_.empty()) throw ContractError("forward on an empty network");
  if (observation.size() != input_scale_.size()) {
    throw ConfigError("forward: expected " + std::to_string(input_scale_.size()) + " inputs, got " +
                      std::to_string(observation.size()));
  }
  for (double x : observation) {
    if (!std::isfinite(x)) throw ConfigError("forward: non-finite observation component");
  }
  std::vector<double> in(observation.begin(), observation.end());
  BatchPass pass;
  forward_batch(*this, in, 1, pass);
  return pass.acts.back();
}

ActionValues QNetwork::action_values(const Observation& obs) const {
  if (layers_.empty() || layers_.back().out != kNumActions) {
    throw ContractError("network output width is not the action count");
  }
  const auto in = obs.as_array();
  const std::vector<double> out = forward(in);
  ActionValues values{};
  std::copy(out.begin(), out.end(), values.begin());
  return values;
}

std::vector<int> QNetwork::sizes() const {
  std::vector<int> s;
  if (layers_.empty()) return s;
  s.push_back(layers_.front().in);
  for (const DenseLayer& layer : layers_) s.push_back(layer.out);
  return s;
}

std::size_t QNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

// ---------------------------------------------------------------------------
// Action selection and replay

MetaAction greedy_action(const ActionValues& values) {
  int best = 0;
  for (int a = 1; a < kNumActions; ++a) {
    if (values[a] > values[best]) best = a;
  }
  return static_cast<MetaAction>(best);
}

MetaAction select_action(const ActionValues& values, double epsilon, Engine& rng) {
  if (epsilon > 0.0 && uniform01(rng) < epsilon) {
    return static_cast<MetaAction>(uniform_index(rng, kNumActions));
  }
  return greedy_action(values);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) {
  require(capacity > 0, "replay buffer capacity must be positive");
  storage_.resize(capacity);
}

void ReplayBuffer::add(const Transition& t) {
  storage_[next_] = t;
  next_ = (next_ + 1) % storage_.size();
  size_ = std::min(size_ + 1, storage_.size());
  ++total_added_;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch_size, Engine& rng) const {
  if (size_ == 0) throw ContractError("sample from an empty replay buffer");
  std::vector<Transition> out;
  out.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) out.push_back(storage_[uniform_index(rng, size_)]);
  return out;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw ContractError("replay buffer index out of range");
  const std::size_t oldest = size_ < storage_.size() ? 0 : next_;
  return storage_[(oldest + i) % storage_.size()];
}

std::string_view loss_name(LossKind kind) { return kind == LossKind::kMse ? "mse" : "huber"; }

std::optional<LossKind> loss_from_name(std::string_view name) {
  if (name == "mse") return LossKind::kMse;
  if (name == "huber") return LossKind::kHuber;
  return std::nullopt;
}

std::string_view optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

std::optional<OptimizerKind> optimizer_from_name(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Loss, gradients and optimisation

Gradients Gradients::zeros_like(const QNetwork& net) {
  Gradients g;
  for (const DenseLayer& layer : net.layers()) {
    g.weight.emplace_back(layer.weight.size(), 0.0);
    g.bias.emplace_back(layer.bias.size(), 0.0);
  }
  return g;
}

double Gradients::global_norm() const {
  double sum = 0.0;
  for (const auto& w : weight) {
    for (double x : w) sum += x * x;
  }
  for (const auto& b : bias) {
    for (double x : b) sum += x * x;
  }
  return std::sqrt(sum);
}

void Gradients::scale(double factor) {
  for (auto& w : weight) {
    for (double& x : w) x *= factor;
  }
  for (auto& b : bias) {
    for (double& x : b) x *= factor;
  }
}

double td_loss(const QNetwork& online, const QNetwork& target, std::span<const Transition> batch,
               double gamma, LossKind loss) {
  if (batch.empty()) throw ContractError("td_loss on an empty batch");
  const std::vector<double> y = td_targets(target, batch, gamma);
  BatchPass pass;
  forward_batch(online, stack_obs(batch, false), static_cast<int>(batch.size()), pass);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const double q = pass.acts.back()[b * kNumActions + batch[b].action];
    total += element_loss(q - y[b], loss);
  }
  return total / static_cast<double>(batch.size());
}

LossAndGradient td_loss_and_gradient(const QNetwork& online, const QNetwork& target,
                                     std::span<const Transition> batch, double gamma,
                                     LossKind loss) {
  if (batch.empty()) throw ContractError("td_loss_and_gradient on an empty batch");
  const std::vector<double> y = td_targets(target, batch, gamma);
  const int n = static_cast<int>(batch.size());
  BatchPass pass;
  forward_batch(online, stack_obs(batch, false), n, pass);

  LossAndGradient out;
  out.grad = Gradients::zeros_like(online);
  std::vector<double> delta(static_cast<std::size_t>(n) * kNumActions, 0.0);
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    const std::size_t k = static_cast<std::size_t>(b) * kNumActions + batch[b].action;
    const double diff = pass.acts.back()[k] - y[b];
    total += element_loss(diff, loss);
    delta[k] = element_grad(diff, loss) / n;
  }
  out.loss = total / n;
  backward_batch(online, pass, std::move(delta), out.grad);
  return out;
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2,
                     double epsilon)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

void Optimizer::apply(QNetwork& net, const Gradients& grad) {
  ++steps_;
  auto& layers = net.layers();
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t k = 0; k < layers[l].weight.size(); ++k) {
        layers[l].weight[k] -= lr_ * grad.weight[l][k];
      }
      for (std::size_t k = 0; k < layers[l].bias.size(); ++k) {
        layers[l].bias[k] -= lr_ * grad.bias[l][k];
      }
    }
    return;
  }
  if (m_.weight.empty()) {
    m_ = Gradients::zeros_like(net);
    v_ = Gradients::zeros_like(net);
  }
  const double t = static_cast<double>(steps_);
  const double step_size = lr_ / (1.0 - std::pow(beta1_, t));
  const double bc2_sqrt = std::sqrt(1.0 - std::pow(beta2_, t));
  const auto update = [&](std::vector<double>& w, const std::vector<double>& g,
                          std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) / bc2_sqrt + eps_);
    }
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grad.weight[l], m_.weight[l], v_.weight[l]);
    update(layers[l].bias, grad.bias[l], m_.bias[l], v_.bias[l]);
  }
}

// ---------------------------------------------------------------------------
// Agent and training loop

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  require(batch_size > 0 && learning_starts >= 0 && train_freq > 0 && gradient_steps > 0 &&
              target_update_interval > 0 && total_steps > 0 && buffer_size > 0,
          "DQN counts must be positive");
  require(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 &&
              epsilon_end <= epsilon_start,
          "epsilon must satisfy 0 <= epsilon_end <= epsilon_start <= 1");
  require(exploration_fraction > 0.0 && exploration_fraction <= 1.0,
          "exploration_fraction must lie in (0, 1]");
  require(!hidden.empty(), "at least one hidden layer is required");
  for (int h : hidden) require(h > 0, "hidden widths must be positive");
  require(max_grad_norm >= 0.0, "max_grad_norm must be >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 &&
              adam_epsilon > 0.0,
          "Adam betas must lie in [0, 1) and epsilon must be positive");
  reward.validate();
  shaping.validate();
}

double epsilon_at(std::int64_t step, const TrainConfig& config) {
  const double span = config.exploration_fraction * config.total_steps;
  const double progress = static_cast<double>(step) / span;
  if (progress >= 1.0) return config.epsilon_end;
  return config.epsilon_start + progress * (config.epsilon_end - config.epsilon_start);
}

DqnAgent::DqnAgent(const TrainConfig& config, QNetwork initial)
    : config_(config),
      online_(std::move(initial)),
      target_(online_),
      optimizer_(config.optimizer, config.learning_rate, config.adam_beta1, config.adam_beta2,
                 config.adam_epsilon) {}

double DqnAgent::train_step(std::span<const Transition> batch) {
  LossAndGradient lg = td_loss_and_gradient(online_, target_, batch, config_.gamma, config_.loss);
  if (config_.max_grad_norm > 0.0) {
    const double norm = lg.grad.global_norm();
    const double coef = config_.max_grad_norm / (norm + 1e-6);
    if (coef < 1.0) lg.grad.scale(coef);
  }
  optimizer_.apply(online_, lg.grad);
  return lg.loss;
}

void DqnAgent::sync_target() {
  target_ = online_;
  ++target_syncs_;
}

TrainResult train(const TrainConfig& config, const ScenarioConfig& scenario,
                  TransitionScorer* scorer) {
  return train(config, scenario, scorer, {});
}

TrainResult train(const TrainConfig& config, const ScenarioConfig& scenario,
                  TransitionScorer* scorer, const EpisodeCallback& on_episode) {
  config.validate();
  scenario.validate();
  if (config.shaping.uses_scores() && scorer == nullptr) {
    throw ConfigError("shaping scheme '" + describe(config.shaping) + "' requires a scorer");
  }
  RewardWeights weights = config.reward;
  weights.v_min = scenario.v_min;
  weights.v_max = scenario.v_max;

  Engine init_rng(TrainStreams::init(config.seed));
  Engine explore_rng(TrainStreams::explore(config.seed));
  Engine replay_rng(TrainStreams::replay(config.seed));

  QNetwork initial = QNetwork::for_observations(config.hidden, scenario.ttc_cap);
  initial.init_uniform(init_rng);
  DqnAgent agent(config, std::move(initial));
  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer_size));

  TrainResult result;
  TrainLog& log = result.log;
  std::uint64_t episode_index = 0;
  SimState state = reset(scenario, TrainStreams::episode(config.seed, episode_index));
  Observation obs = extract_observation(state);
  EpisodeLog current;
  current.index = 0;
  double loss_sum = 0.0;
  int loss_count = 0;
  double speed_sum = 0.0;
  int substeps = 0;

  for (std::int64_t t = 0; t < config.total_steps; ++t) {
    const double epsilon = epsilon_at(t, config);
    MetaAction action;
    if (t < config.learning_starts) {
      action = static_cast<MetaAction>(uniform_index(explore_rng, kNumActions));
    } else {
      action = select_action(agent.online().action_values(obs), epsilon, explore_rng);
    }

    const StepInfo info = advance(state, action);
    const Observation next_obs = extract_observation(state);
    const double env = env_reward(info.ego_speed_after, info.collided_now, weights);
    std::optional<double> score;
    if (config.shaping.uses_scores()) {
      score = normalize_score(scorer->raw_score(obs, action, next_obs));
    }
    const RewardBreakdown reward = compose_reward(config.shaping, env, score);
    buffer.add(Transition{obs.as_array(), action_code(action), reward.total, next_obs.as_array(),
                          info.collided_now});

    current.length += 1;
    current.total_return += reward.total;
    current.env_return += env;
    current.lane_changes += info.lane_changes;
    current.epsilon = epsilon;
    speed_sum += info.speed_sum;
    substeps += info.substeps;
    obs = next_obs;

    const std::int64_t n = t + 1;
    if (n % config.train_freq == 0 && n > config.learning_starts) {
      for (int g = 0; g < config.gradient_steps; ++g) {
        const std::vector<Transition> batch =
            buffer.sample(static_cast<std::size_t>(config.batch_size), replay_rng);
        const double loss = agent.train_step(batch);
        log.losses.push_back(loss);
        loss_sum += loss;
        ++loss_count;
      }
    }
    if (n % config.target_update_interval == 0) agent.sync_target();

    if (state.done() || n == config.total_steps) {
      current.collided = state.collided;
      current.mean_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
      current.mean_speed = substeps > 0 ? speed_sum / substeps : 0.0;
      log.episodes.push_back(current);
      if (on_episode) on_episode(current, n);
      if (n == config.total_steps) break;
      ++episode_index;
      state = reset(scenario, TrainStreams::episode(config.seed, episode_index));
      obs = extract_observation(state);
      current = EpisodeLog{};
      current.index = static_cast<int>(episode_index);
      current.start_step = n;
      loss_sum = 0.0;
      loss_count = 0;
      speed_sum = 0.0;
      substeps = 0;
    }
  }

  log.env_steps = config.total_steps;
  log.gradient_steps = agent.gradient_steps();
  log.target_syncs = agent.target_syncs();
  if (scorer != nullptr && config.shaping.uses_scores()) log.scorer = scorer->counters();

  result.model = agent.online();
  result.metadata.scenario = std::string(scenario_name(scenario.kind));
  result.metadata.shaping = config.shaping;
  result.metadata.scorer =
      config.shaping.uses_scores() && scorer != nullptr ? scorer->identity() : "none";
  result.metadata.training_steps = config.total_steps;
  result.metadata.seed = config.seed;
  return result;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "episode,start_step,length,return,env_return,collided,epsilon,mean_loss,lane_changes,"
        "mean_speed\n";
  for (const EpisodeLog& e : episodes) {
    os << e.index << ',' << e.start_step << ',' << e.length << ','
       << format_float_repr(e.total_return) << ',' << format_float_repr(e.env_return) << ','
       << (e.collided ? 1 : 0) << ',' << format_float_repr(e.epsilon) << ','
       << format_float_repr(e.mean_loss) << ',' << e.lane_changes << ','
       << format_float_repr(e.mean_speed) << '\n';
  }
  os << "\ncounter,value\n";
  os << "env_steps," << env_steps << '\n';
  os << "episodes," << episodes.size() << '\n';
  os << "gradient_steps," << gradient_steps << '\n';
  os << "target_syncs," << target_syncs << '\n';
  os << "scorer_requests," << scorer.requests << '\n';
  os << "scorer_backend_calls," << scorer.backend_calls << '\n';
  os << "scorer_cache_hits," << scorer.cache_hits << '\n';
  os << "scorer_cache_misses," << scorer.cache_misses << '\n';
  os << "scorer_fallbacks," << scorer.fallbacks << '\n';
  os << "scorer_parse_failures," << scorer.parse_failures << '\n';
  os << "scorer_transport_failures," << scorer.transport_failures << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Persistence

std::string serialize_model(const QNetwork& net, const ModelMetadata& metadata) {
  const std::vector<int> sizes = net.sizes();
  if (sizes.empty()) throw ContractError("cannot serialize an empty network");
  ByteWriter w;
  w.raw("SHWY");
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (int s : sizes) w.u32(static_cast<std::uint32_t>(s));
  for (double s : net.input_scale()) w.f64(s);

  nlohmann::ordered_json meta;
  meta["scenario"] = metadata.scenario;
  meta["shaping"] = std::string(shaping_name(metadata.shaping.kind));
  meta["lambda"] = metadata.shaping.lambda;
  meta["scorer"] = metadata.scorer;
  meta["training_steps"] = metadata.training_steps;
  meta["seed"] = metadata.seed;
  const std::string meta_text = meta.dump();
  w.u32(static_cast<std::uint32_t>(meta_text.size()));
  w.raw(meta_text);

  for (const DenseLayer& layer : net.layers()) {
    for (double x : layer.weight) w.f64(x);
    for (double x : layer.bias) w.f64(x);
  }
  return w.take();
}

std::pair<QNetwork, ModelMetadata> deserialize_model(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(4, "magic") != "SHWY") throw FormatError("not a model file (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version) +
                      " (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  const std::uint32_t layer_count = r.u32("layer count");
  if (layer_count == 0 || layer_count > kMaxLayers) {
    throw FormatError("implausible layer count " + std::to_string(layer_count));
  }
  std::vector<int> sizes;
  std::string shape_text;
  for (std::uint32_t k = 0; k <= layer_count; ++k) {
    const std::uint32_t s = r.u32("layer shape table");
    if (s == 0 || s > kMaxWidth) throw FormatError("implausible layer width " + std::to_string(s));
    sizes.push_back(static_cast<int>(s));
    shape_text += (k ? "-" : "") + std::to_string(s);
  }
  if (sizes.front() != kObservationSize || sizes.back() != kNumActions) {
    throw FormatError("model shape " + shape_text + " does not map " +
                      std::to_string(kObservationSize) + " observation inputs to " +
                      std::to_string(kNumActions) + " action values");
  }
  std::vector<double> scale;
  for (int k = 0; k < sizes.front(); ++k) {
    const double s = r.f64("input scale");
    if (!std::isfinite(s) || s <= 0.0) throw FormatError("input scale must be positive and finite");
    scale.push_back(s);
  }
  const std::uint32_t meta_len = r.u32("metadata length");
  const std::string_view meta_text = r.raw(meta_len, "metadata");
  ModelMetadata metadata;
  try {
    const nlohmann::json meta = nlohmann::json::parse(meta_text);
    metadata.scenario = meta.at("scenario").get<std::string>();
    const auto kind = shaping_from_name(meta.at("shaping").get<std::string>());
    if (!kind) throw FormatError("unknown shaping scheme in model metadata");
    metadata.shaping = ShapingScheme{*kind, meta.at("lambda").get<double>()};
    metadata.scorer = meta.at("scorer").get<std::string>();
    metadata.training_steps = meta.at("training_steps").get<std::int64_t>();
    metadata.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model metadata: ") + e.what());
  }

  std::size_t expected = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    expected += (static_cast<std::size_t>(sizes[l]) + 1) * sizes[l + 1] * sizeof(double);
  }
  if (r.remaining() < expected) {
    throw FormatError("model file truncated: shape " + shape_text + " needs " +
                      std::to_string(expected) + " weight bytes, found " +
                      std::to_string(r.remaining()));
  }
  if (r.remaining() > expected) {
    throw FormatError("model file has " + std::to_string(r.remaining() - expected) +
                      " trailing bytes after shape " + shape_text);
  }
  QNetwork net(sizes, scale);
  for (DenseLayer& layer : net.layers()) {
    for (double& x : layer.weight) x = r.f64("weights");
    for (double& x : layer.bias) x = r.f64("biases");
  }
  return {std::move(net), metadata};
}

void save_model(const std::string& path, const QNetwork& net, const ModelMetadata& metadata) {
  const std::string bytes = serialize_model(net, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open model file for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing model file: " + path);
}

std::pair<QNetwork, ModelMetadata> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_model(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace shwy
