#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "gradcheck.hpp"
#include "shwy/dqn.hpp"
#include "shwy/errors.hpp"

using namespace shwy;
using shwy::testing::gradient_relative_error;
using shwy::testing::random_batch;

namespace {

QNetwork toy_network(std::uint64_t seed) {
  QNetwork net({4, 2, 2, 5}, {1.0 / 30.0, 0.1, 0.1, 0.1});
  Engine rng(seed);
  net.init_uniform(rng);
  return net;
}

TrainConfig small_config() {
  TrainConfig c;
  c.total_steps = 600;
  c.learning_starts = 100;
  c.batch_size = 16;
  c.hidden = {16, 16};
  c.target_update_interval = 200;
  c.buffer_size = 1000;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("forward pass matches a hand evaluation") {
  QNetwork net({4, 2, 5}, {1.0, 1.0, 1.0, 1.0});
  auto& l0 = net.layers()[0];
  auto& l1 = net.layers()[1];
  // hidden0 = relu(x0 - x1), hidden1 = relu(x2 + 1)
  l0.w(0, 0) = 1.0;
  l0.w(1, 0) = -1.0;
  l0.w(2, 1) = 1.0;
  l0.bias[1] = 1.0;
  for (int j = 0; j < 5; ++j) {
    l1.w(0, j) = j;
    l1.w(1, j) = -1.0;
    l1.bias[j] = 0.5;
  }
  const std::vector<double> x{3.0, 5.0, 2.0, 0.0};  // hidden = (0, 3)
  const auto q = net.forward(x);
  for (int j = 0; j < 5; ++j) CHECK(q[j] == doctest::Approx(-2.5));
  const std::vector<double> y{5.0, 3.0, 2.0, 0.0};  // hidden = (2, 3)
  const auto q2 = net.forward(y);
  for (int j = 0; j < 5; ++j) CHECK(q2[j] == doctest::Approx(2.0 * j - 2.5));
  const std::vector<double> bad{std::nan(""), 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(net.forward(bad), ConfigError);
}

TEST_CASE("input scale is applied before the first layer") {
  QNetwork net({4, 5}, {0.5, 1.0, 1.0, 1.0});
  net.layers()[0].w(0, 0) = 1.0;
  const std::vector<double> x{8.0, 0.0, 0.0, 0.0};
  CHECK(net.forward(x)[0] == 4.0);
  const QNetwork obs_net = QNetwork::for_observations({8}, 10.0);
  CHECK(obs_net.sizes() == std::vector<int>{4, 8, 5});
  CHECK(obs_net.input_scale() == std::vector<double>{1.0 / 30.0, 0.1, 0.1, 0.1});
  CHECK(obs_net.parameter_count() == 4 * 8 + 8 + 8 * 5 + 5);
}

TEST_CASE("uniform init stays inside the fan-in bound") {
  QNetwork net = QNetwork::for_observations({64, 32}, 10.0);
  Engine rng(1);
  net.init_uniform(rng);
  for (const DenseLayer& layer : net.layers()) {
    const double bound = 1.0 / std::sqrt(double(layer.in));
    double max_abs = 0.0;
    for (double w : layer.weight) max_abs = std::max(max_abs, std::abs(w));
    for (double b : layer.bias) max_abs = std::max(max_abs, std::abs(b));
    CHECK(max_abs <= bound);
    CHECK(max_abs > 0.8 * bound);
  }
  QNetwork again = QNetwork::for_observations({64, 32}, 10.0);
  Engine rng2(1);
  again.init_uniform(rng2);
  CHECK(again == net);
}

TEST_CASE("greedy and epsilon-greedy selection") {
  CHECK(greedy_action({0.0, 2.0, 2.0, 1.0, -1.0}) == MetaAction::kIdle);
  CHECK(greedy_action({5.0, 5.0, 5.0, 5.0, 5.0}) == MetaAction::kLaneLeft);
  Engine rng(4);
  for (int i = 0; i < 100; ++i) CHECK(select_action({0, 0, 0, 9, 0}, 0.0, rng) == MetaAction::kFaster);
  int counts[kNumActions] = {};
  for (int i = 0; i < 5000; ++i) ++counts[action_code(select_action({0, 0, 0, 9, 0}, 1.0, rng))];
  for (int c : counts) CHECK(c > 850);
}

TEST_CASE("epsilon schedule") {
  TrainConfig c;
  c.total_steps = 1000;
  c.exploration_fraction = 0.1;
  CHECK(epsilon_at(0, c) == 1.0);
  CHECK(epsilon_at(50, c) == doctest::Approx(0.525));
  CHECK(epsilon_at(100, c) == doctest::Approx(0.05));
  CHECK(epsilon_at(999, c) == doctest::Approx(0.05));
  for (int t = 1; t < 1000; ++t) CHECK(epsilon_at(t, c) <= epsilon_at(t - 1, c));
}

TEST_CASE("replay buffer is a ring with uniform sampling") {
  ReplayBuffer buf(3);
  CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
  for (int i = 0; i < 5; ++i) {
    Transition t;
    t.action = i % kNumActions;
    t.reward = i;
    buf.add(t);
  }
  CHECK(buf.size() == 3);
  CHECK(buf.total_added() == 5);
  CHECK(buf.at(0).reward == 2.0);
  CHECK(buf.at(2).reward == 4.0);
  Engine a(3), b(3);
  const auto s1 = buf.sample(200, a);
  CHECK(s1 == buf.sample(200, b));
  std::set<double> seen;
  for (const auto& t : s1) seen.insert(t.reward);
  CHECK(seen == std::set<double>{2.0, 3.0, 4.0});
}

TEST_CASE("loss matches a hand-computed target") {
  QNetwork online({4, 5}, {1.0, 1.0, 1.0, 1.0});
  QNetwork target = online;
  for (int j = 0; j < 5; ++j) {
    online.layers()[0].bias[j] = j;        // Q(s, a) = a
    target.layers()[0].bias[j] = 10.0 - j;  // max Q' = 10
  }
  Transition t;
  t.action = 2;
  t.reward = 1.0;
  t.done = false;
  const std::vector<Transition> batch{t};
  // y = 1 + 0.5 * 10 = 6, diff = 2 - 6
  CHECK(td_loss(online, target, batch, 0.5, LossKind::kMse) == doctest::Approx(16.0));
  CHECK(td_loss(online, target, batch, 0.5, LossKind::kHuber) == doctest::Approx(3.5));
  t.done = true;  // y = 1, diff = 1
  const std::vector<Transition> terminal{t};
  CHECK(td_loss(online, target, terminal, 0.5, LossKind::kMse) == doctest::Approx(1.0));
  CHECK(td_loss(online, target, terminal, 0.5, LossKind::kHuber) == doctest::Approx(0.5));
}

TEST_CASE("property: analytic gradients match finite differences") {
  Engine rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const QNetwork online = toy_network(100 + trial);
    const QNetwork target = toy_network(200 + trial);
    const auto batch = random_batch(rng, 8);
    CHECK(gradient_relative_error(online, target, batch, 0.98, LossKind::kMse) < 1e-4);
    CHECK(gradient_relative_error(online, target, batch, 0.98, LossKind::kHuber) < 1e-4);
  }
  QNetwork wide = QNetwork::for_observations({12, 7}, 10.0);
  Engine init(5);
  wide.init_uniform(init);
  const auto batch = random_batch(rng, 16);
  CHECK(gradient_relative_error(wide, wide, batch, 0.9, LossKind::kMse) < 1e-4);
}

TEST_CASE("gradient norm and scaling") {
  Gradients g = Gradients::zeros_like(toy_network(1));
  g.weight[0][0] = 3.0;
  g.bias[2][4] = 4.0;
  CHECK(g.global_norm() == doctest::Approx(5.0));
  g.scale(0.5);
  CHECK(g.global_norm() == doctest::Approx(2.5));
}

TEST_CASE("optimiser updates") {
  QNetwork net({4, 5}, {1.0, 1.0, 1.0, 1.0});
  Gradients g = Gradients::zeros_like(net);
  for (auto& w : g.weight[0]) w = 2.0;
  for (auto& b : g.bias[0]) b = -0.5;

  QNetwork sgd_net = net;
  Optimizer sgd(OptimizerKind::kSgd, 0.1);
  sgd.apply(sgd_net, g);
  CHECK(sgd_net.layers()[0].weight[0] == doctest::Approx(-0.2));
  CHECK(sgd_net.layers()[0].bias[0] == doctest::Approx(0.05));

  // First Adam step moves every parameter by lr * sign(g), up to eps.
  QNetwork adam_net = net;
  Optimizer adam(OptimizerKind::kAdam, 0.01);
  adam.apply(adam_net, g);
  CHECK(adam_net.layers()[0].weight[3] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(adam_net.layers()[0].bias[1] == doctest::Approx(0.01).epsilon(1e-6));
  // Second step with the same gradient: m_hat = g, v_hat = g^2 again.
  adam.apply(adam_net, g);
  CHECK(adam_net.layers()[0].weight[3] == doctest::Approx(-0.02).epsilon(1e-6));
  CHECK(adam.steps() == 2);

  // Varying gradients against the textbook recurrences.
  double m = 0.0, v = 0.0, w = 0.0;
  const double grads[] = {1.0, -3.0, 0.5};
  QNetwork one({4, 5}, {1.0, 1.0, 1.0, 1.0});
  Optimizer opt(OptimizerKind::kAdam, 0.1);
  for (int t = 1; t <= 3; ++t) {
    const double gt = grads[t - 1];
    m = 0.9 * m + 0.1 * gt;
    v = 0.999 * v + 0.001 * gt * gt;
    const double m_hat = m / (1.0 - std::pow(0.9, t));
    const double v_hat = v / (1.0 - std::pow(0.999, t));
    w -= 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    Gradients gg = Gradients::zeros_like(one);
    gg.weight[0][0] = gt;
    opt.apply(one, gg);
  }
  CHECK(one.layers()[0].weight[0] == doctest::Approx(w).epsilon(1e-12));
}

TEST_CASE("agent step equals clip-then-Adam") {
  TrainConfig c = small_config();
  c.max_grad_norm = 0.05;  // small enough to bite
  const QNetwork start = toy_network(7);
  DqnAgent agent(c, start);
  Engine rng(8);
  const auto batch = random_batch(rng, 16);

  QNetwork expected = start;
  LossAndGradient lg = td_loss_and_gradient(start, start, batch, c.gamma, c.loss);
  const double norm = lg.grad.global_norm();
  REQUIRE(norm > c.max_grad_norm);
  lg.grad.scale(c.max_grad_norm / (norm + 1e-6));  // torch clip_grad_norm_ convention
  Optimizer opt(c.optimizer, c.learning_rate);
  opt.apply(expected, lg.grad);

  CHECK(agent.train_step(batch) == doctest::Approx(lg.loss));
  CHECK(agent.online() == expected);
  CHECK(agent.target() == start);
  agent.sync_target();
  CHECK(agent.target() == agent.online());
  CHECK(agent.target_syncs() == 1);
}

TEST_CASE("train config validation") {
  TrainConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.gamma = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.shaping = ShapingScheme::dense(1.0);
  CHECK_THROWS_AS(train(c, ScenarioConfig::defaults(ScenarioKind::kHighway), nullptr), ConfigError);
  for (auto k : {LossKind::kMse, LossKind::kHuber}) CHECK(loss_from_name(loss_name(k)) == k);
  for (auto k : {OptimizerKind::kAdam, OptimizerKind::kSgd}) CHECK(optimizer_from_name(optimizer_name(k)) == k);
}

TEST_CASE("training loop bookkeeping and determinism") {
  const TrainConfig c = small_config();
  const ScenarioConfig sc = ScenarioConfig::defaults(ScenarioKind::kHighway);
  int callbacks = 0;
  const TrainResult a = train(c, sc, nullptr, [&](const EpisodeLog&, std::int64_t) { ++callbacks; });
  const TrainResult b = train(c, sc, nullptr);
  CHECK(a.model == b.model);
  CHECK(a.log.to_csv() == b.log.to_csv());
  CHECK(callbacks == int(a.log.episodes.size()));

  CHECK(a.log.env_steps == 600);
  // Updates at n = 104, 108, ..., 600.
  CHECK(a.log.gradient_steps == std::uint64_t((600 - 100) / 4 * c.gradient_steps));
  CHECK(a.log.losses.size() == a.log.gradient_steps);
  CHECK(a.log.target_syncs == 3);
  int total_length = 0;
  for (std::size_t i = 0; i < a.log.episodes.size(); ++i) {
    const EpisodeLog& e = a.log.episodes[i];
    CHECK(e.index == int(i));
    CHECK(e.start_step == total_length);
    CHECK(e.length <= sc.horizon_steps);
    total_length += e.length;
  }
  CHECK(total_length == 600);
  CHECK(a.metadata.training_steps == 600);
  CHECK(a.metadata.scenario == "highway");
  CHECK(a.metadata.scorer == "none");

  TrainConfig other = c;
  other.seed = 10;
  CHECK_FALSE(train(other, sc, nullptr).model == a.model);
}

TEST_CASE("shaped training records scorer counters") {
  TrainConfig c = small_config();
  c.total_steps = 300;
  c.shaping = ShapingScheme::dense(1.0);
  TransitionScorer scorer(make_backend(BackendKind::kMockBalanced, {}), 5.0, ScoreQuantization{});
  const TrainResult r = train(c, ScenarioConfig::defaults(ScenarioKind::kHighway), &scorer);
  CHECK(r.log.scorer.requests == 300);
  CHECK(r.log.scorer.cache_hits + r.log.scorer.cache_misses == 300);
  CHECK(r.log.scorer.fallbacks == 0);
  CHECK(r.metadata.scorer == "mock-balanced");
  for (const EpisodeLog& e : r.log.episodes) CHECK(e.total_return >= e.env_return);
}

TEST_CASE("model serialisation round trip") {
  const QNetwork net = toy_network(3);
  ModelMetadata meta;
  meta.scenario = "merge";
  meta.shaping = ShapingScheme::dense(0.5);
  meta.scorer = "mock-conservative";
  meta.training_steps = 1234;
  meta.seed = 77;
  const std::string bytes = serialize_model(net, meta);
  CHECK(bytes.substr(0, 4) == "SHWY");
  const auto [net2, meta2] = deserialize_model(bytes);
  CHECK(net2 == net);
  CHECK(meta2 == meta);
  CHECK(serialize_model(net2, meta2) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "shwy_test_model.shwy";
  save_model(path.string(), net, meta);
  CHECK(load_model(path.string()).first == net);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path.string()), IoError);
}

TEST_CASE("corrupt model files are rejected") {
  const std::string bytes = serialize_model(toy_network(3), ModelMetadata{});
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bad), FormatError);
  bad = bytes;
  bad[4] = 2;  // version
  CHECK_THROWS_AS(deserialize_model(bad), FormatError);
  for (std::size_t cut : {std::size_t(3), std::size_t(10), bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(deserialize_model(bytes.substr(0, cut)), FormatError);
  }
  CHECK_THROWS_AS(deserialize_model(bytes + "x"), FormatError);
  const QNetwork wrong({3, 5}, {1.0, 1.0, 1.0});
  CHECK_THROWS_AS(deserialize_model(serialize_model(wrong, ModelMetadata{})), FormatError);
}
