#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "pirl/errors.hpp"
#include "pirl/training.hpp"
#include "pirl/vehicle.hpp"

using namespace pirl;
using namespace pirl::training;
using sde::Vector;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

Transition make_transition(double h, double x, std::size_t a, double r, bool terminal) {
  return Transition{{h, v1(x)}, a, r, {h - 0.02, v1(x)}, terminal};
}

QNetwork random_net(Rng& rng, const Environment& env, std::size_t width = 6) {
  qnet::NetworkSpec spec{env.feature_dim() + 1, 2, width, env.system().num_actions()};
  QNetwork net(spec, input_scaling_for(env));
  for (Eigen::Index i = 0; i < net.params().size(); ++i) {
    net.params()[i] = rng.uniform(-1.0, 1.0);
  }
  return net;
}

// Network whose output does not depend on the input: all weights zero.
QNetwork constant_net(const Environment& env, double logit) {
  qnet::NetworkSpec spec{env.feature_dim() + 1, 1, 4, env.system().num_actions()};
  QNetwork net(spec, input_scaling_for(env));
  net.bias(1).setConstant(logit);
  return net;
}

// Finite-difference assembly of f~ . dQ/ds + 1/2 sum_i sigma~_i^T H sigma~_i.
double fd_pde_operator(const QNetwork& net, const Environment& env, const sde::AugmentedState& s,
                       std::size_t a, bool with_diffusion) {
  Vector drift;
  sde::Matrix diff;
  env.pde_coefficients(s.x, a, with_diffusion, drift, diff);
  const Vector in = env.net_input(s);
  Vector f(in.size());
  f[0] = -1.0;
  f.tail(drift.size()) = drift;
  auto q = [&](const Vector& z) { return net.forward(z)[static_cast<Eigen::Index>(a)]; };
  const double h1 = 1e-6;
  double out = (q(in + h1 * f) - q(in - h1 * f)) / (2 * h1);
  const double h2 = 1e-3;
  for (Eigen::Index i = 0; i < diff.cols(); ++i) {
    Vector g = Vector::Zero(in.size());
    g.tail(diff.rows()) = diff.col(i);
    out += 0.5 * (q(in + h2 * g) - 2 * q(in) + q(in - h2 * g)) / (h2 * h2);
  }
  return out;
}

}  // namespace

TEST(Replay, FifoEvictionAndDistinctSamples) {
  ReplayMemory mem(5);
  for (int i = 0; i < 8; ++i) {
    mem.push(make_transition(1.0, i, 0, 0.0, false));
  }
  EXPECT_EQ(mem.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(mem.at(i).s.x[0], static_cast<double>(i + 3));
  }
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    auto b = mem.sample(5, rng);
    std::map<const Transition*, int> seen;
    for (auto* p : b) {
      ++seen[p];
    }
    EXPECT_EQ(seen.size(), 5u);
  }
  EXPECT_THROW(mem.sample(6, rng), ContractViolation);
}

TEST(Sampling, InitialDistribution) {
  auto env = make_brownian_benchmark();
  TrainConfig cfg;
  Rng rng(2);
  double mean = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_initial_state(*env, cfg, rng);
    EXPECT_EQ(s.horizon, 1.0);
    mean += s.x[0] / n;
  }
  // Uniform on (-0.9, 0.9): sd of the mean = 1.8 / sqrt(12 n).
  EXPECT_LE(std::abs(mean), 3 * 1.8 / std::sqrt(12.0 * n));

  BrownianConfig point;
  point.initial_low = point.initial_high = 0.25;
  auto env2 = make_brownian_benchmark(point);
  EXPECT_EQ(sample_initial_state(*env2, cfg, rng).x[0], 0.25);
}

TEST(Sampling, CollocationDistribution) {
  auto env = make_brownian_benchmark();
  Rng rng(3);
  const int n = 10000;
  double mean_h = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_collocation(*env, rng);
    EXPECT_TRUE(env->safe_set().contains(s.x));
    mean_h += s.horizon / n;
  }
  EXPECT_LE(std::abs(mean_h - 0.5), 3 * 1.0 / std::sqrt(12.0 * n));

  BrownianConfig zero;
  zero.settings.tau_max = 0.0;
  auto env0 = make_brownian_benchmark(zero);
  EXPECT_EQ(sample_collocation(*env0, rng).horizon, 0.0);
}

TEST(Sampling, BoundaryMixture) {
  auto env = make_brownian_benchmark();
  Rng rng(4);
  const int n = 10000;
  int branch1 = 0;
  for (int i = 0; i < n; ++i) {
    const auto b = sample_boundary(*env, rng);
    if (b.branch == 1) {
      ++branch1;
      EXPECT_EQ(b.s.horizon, 0.0);
      EXPECT_TRUE(env->safe_set().contains(b.s.x));
    } else {
      EXPECT_NEAR(env->safe_set().signed_distance(b.s.x), 0.0, 1e-9);
    }
  }
  EXPECT_LE(std::abs(branch1 - n / 2.0), 3 * std::sqrt(n * 0.25));

  auto car = vehicle::make_cornering_env();
  for (int i = 0; i < 1000; ++i) {
    const auto b = sample_boundary(*car, rng);
    if (b.branch == 2) {
      EXPECT_NEAR(car->safe_set().signed_distance(b.s.x), 0.0, 1e-9);
    }
  }
}

TEST(Losses, Targets) {
  auto env = make_brownian_benchmark();
  // Target network constant at sigmoid(logit) = 0.7.
  const QNetwork target = constant_net(*env, std::log(0.7 / 0.3));
  const Transition t1 = make_transition(0.01, 0.0, 0, 1.0, true);
  const Transition t2 = make_transition(0.5, 0.0, 0, 0.0, true);
  const Transition t3 = make_transition(0.5, 0.0, 0, 0.0, false);
  const auto y = dqn_targets(*env, {&t1, &t2, &t3}, target);
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_NEAR(y[2], 0.7, 1e-15);
}

TEST(Losses, DataLossArithmetic) {
  auto env = make_brownian_benchmark();
  const QNetwork half = constant_net(*env, 0.0);
  const Matrix in = input_batch(*env, {{1.0, v1(0.0)}, {1.0, v1(0.3)}});
  EXPECT_EQ(loss_data(half, in.leftCols(1), {0}, {1.0}), 0.25);
  EXPECT_EQ(loss_data(half, in.leftCols(1), {2}, {0.5}), 0.0);
  // Errors 0.5 and 0.1: (0.25 + 0.01) / 2.
  EXPECT_NEAR(loss_data(half, in, {0, 1}, {1.0, 0.4}), 0.13, 1e-15);
}

TEST(Losses, PdeResidualSimpleCases) {
  auto env = make_brownian_benchmark();
  const QNetwork flat = constant_net(*env, 0.4);
  EXPECT_EQ(pde_residual(flat, *env, {0.5, v1(0.2)}, 1, true), 0.0);
  const auto batch = loss_pde(flat, *env, {{0.5, v1(0.2)}, {0.1, v1(-0.7)}}, true);
  EXPECT_EQ(batch.loss, 0.0);

  // q = sigmoid(c h) near h = 0 is ~ linear with slope c/4; use the exact
  // derivative: W_P = -dq/dh with sigma = 0 and x-independent q.
  BrownianConfig det;
  det.sigma = 0.0;
  auto env0 = make_brownian_benchmark(det);
  qnet::NetworkSpec spec{2, 0, 0, 3};
  QNetwork lin(spec, qnet::InputScaling::identity(2));
  lin.weight(0).col(0).setConstant(0.8);
  const double h = 0.3;
  const double p = 1.0 / (1.0 + std::exp(-0.8 * h));
  EXPECT_NEAR(pde_residual(lin, *env0, {h, v1(0.1)}, 0, true), -0.8 * p * (1 - p), 1e-15);
}

TEST(Losses, PdeResidualMatchesFiniteDifferenceOperator) {
  Rng rng(5);
  auto env = make_brownian_benchmark();
  auto cfg = vehicle::cornering_defaults();
  auto car = vehicle::make_cornering_env(cfg);
  double worst = 0.0;
  for (int t = 0; t < 40; ++t) {
    const Environment& e = (t % 2 == 0) ? static_cast<const Environment&>(*env) : *car;
    const QNetwork net = random_net(rng, e);
    sde::AugmentedState s = sample_collocation(e, rng);
    const std::size_t a = rng.index(e.system().num_actions());
    const double w = pde_residual(net, e, s, a, true);
    const double fd = fd_pde_operator(net, e, s, a, true);
    worst = std::max(worst, std::abs(w - fd) / std::max(1e-6, std::abs(fd)));
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(Losses, BoundaryLossCases) {
  BrownianConfig bc;
  auto env = make_brownian_benchmark(bc);
  const QNetwork q03 = constant_net(*env, std::log(0.3 / 0.7));
  EXPECT_NEAR(loss_boundary(q03, *env, {{0.4, v1(1.0)}}, 0.1).loss, 0.09, 1e-15);
  const QNetwork q05 = constant_net(*env, 0.0);
  EXPECT_NEAR(loss_boundary(q05, *env, {{0.0, v1(0.95)}}, 0.1).loss, 0.0, 1e-24);
  const QNetwork q1 = constant_net(*env, 40.0);
  EXPECT_NEAR(loss_boundary(q1, *env, {{0.0, v1(0.0)}}, 0.1).loss, 0.0, 1e-30);
}

TEST(Losses, CombinedGradientMatchesFiniteDifferences) {
  Rng rng(6);
  BrownianConfig bc;
  auto env = make_brownian_benchmark(bc);
  auto car_cfg = vehicle::cornering_defaults();
  auto car = vehicle::make_cornering_env(car_cfg);
  for (const Environment* e : {static_cast<const Environment*>(env.get()),
                               static_cast<const Environment*>(car.get())}) {
    const QNetwork net = random_net(rng, *e, 5);
    const QNetwork target = random_net(rng, *e, 5);
    TrainConfig cfg;
    cfg.lambda = 0.7;
    cfg.mu = 1.3;
    cfg.boundary_epsilon = 0.1;
    std::vector<Transition> store;
    for (int i = 0; i < 6; ++i) {
      const auto s = sample_collocation(*e, rng);
      store.push_back({s, rng.index(e->system().num_actions()), i == 0 ? 1.0 : 0.0,
                       sample_collocation(*e, rng), i % 2 == 0});
    }
    std::vector<const Transition*> data;
    for (auto& t : store) {
      data.push_back(&t);
    }
    std::vector<sde::AugmentedState> col;
    std::vector<sde::AugmentedState> bnd;
    for (int i = 0; i < 5; ++i) {
      col.push_back(sample_collocation(*e, rng));
      bnd.push_back(sample_boundary(*e, rng).s);
    }
    Vector grad;
    const LossReport rep = combined_loss(net, target, *e, cfg, data, col, bnd, grad);
    EXPECT_EQ(rep.total, rep.l_data + cfg.lambda * rep.l_pde + cfg.mu * rep.l_boundary);
    Vector fd(grad.size());
    Vector scratch;
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
      QNetwork p = net;
      QNetwork m = net;
      p.params()[i] += h;
      m.params()[i] -= h;
      fd[i] = (combined_loss(p, target, *e, cfg, data, col, bnd, scratch).total -
               combined_loss(m, target, *e, cfg, data, col, bnd, scratch).total) /
              (2 * h);
    }
    EXPECT_LE((grad - fd).norm() / fd.norm(), 1e-5) << e->kind();

    // Dropping the Hessian term changes the gradient only through L_P.
    TrainConfig stop = cfg;
    stop.pde_grad_mode = PdeGradMode::kStopHessian;
    Vector g2;
    const LossReport rep2 = combined_loss(net, target, *e, stop, data, col, bnd, g2);
    EXPECT_EQ(rep2.total, rep.total);
  }
}

TEST(Losses, PlainDqnWhenWeightsVanish) {
  Rng rng(7);
  auto env = make_brownian_benchmark();
  const QNetwork net = random_net(rng, *env);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  cfg.mu = 0.0;
  const Transition t = make_transition(0.5, 0.1, 1, 0.0, false);
  Vector g;
  const auto rep = combined_loss(net, net, *env, cfg, {&t}, {{0.3, v1(0.2)}}, {{0.0, v1(0.2)}}, g);
  EXPECT_EQ(rep.total, rep.l_data);
}

TEST(Target, SoftUpdateLimits) {
  Rng rng(8);
  auto env = make_brownian_benchmark();
  const QNetwork online = random_net(rng, *env);
  QNetwork target = random_net(rng, *env);
  const Vector before = target.params();
  soft_update(target, online, 1.0);
  EXPECT_EQ(target.params(), online.params());
  QNetwork t2(online.spec(), online.scaling());
  t2.set_params(before);
  soft_update(t2, online, 1e-300);
  EXPECT_EQ(t2.params(), before);
}

TEST(Exploration, LinearDecaySchedule) {
  TrainConfig cfg;
  cfg.episodes = 1000;
  EXPECT_EQ(exploration_rate(cfg, 0), 1.0);
  EXPECT_NEAR(exploration_rate(cfg, 100), 0.525, 1e-12);
  EXPECT_EQ(exploration_rate(cfg, 200), 0.05);
  EXPECT_EQ(exploration_rate(cfg, 999), 0.05);
}

TEST(Optimization, LearningRateSchedule) {
  TrainConfig cfg;
  cfg.episodes = 101;
  cfg.learning_rate = 1e-3;
  EXPECT_EQ(learning_rate_at(cfg, 0), 1e-3);
  EXPECT_EQ(learning_rate_at(cfg, 100), 1e-3);
  cfg.learning_rate_final = 1e-4;
  EXPECT_EQ(learning_rate_at(cfg, 0), 1e-3);
  EXPECT_NEAR(learning_rate_at(cfg, 50), 5.5e-4, 1e-15);
  EXPECT_NEAR(learning_rate_at(cfg, 100), 1e-4, 1e-15);
  for (long ep = 1; ep < 101; ++ep) {
    EXPECT_LT(learning_rate_at(cfg, ep), learning_rate_at(cfg, ep - 1));
  }
  cfg.learning_rate_final = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Exploration, UniformOverActionGridWhenEpsIsOne) {
  auto cfg_env = vehicle::cornering_defaults();
  cfg_env.settings.n_substeps = 2;
  auto car = vehicle::make_cornering_env(cfg_env);
  TrainConfig cfg;
  cfg.episodes = 400;
  cfg.eps_start = cfg.eps_end = 1.0;
  cfg.lambda = cfg.mu = 0.0;
  cfg.batch_data = 1000000;  // no learning needed for this check
  cfg.memory_capacity = 1000000;
  cfg.network = {16, 1, 4, 25};
  cfg.seed = 5;
  std::vector<long> counts(25, 0);
  long n = 0;
  TrainHooks hooks;
  hooks.on_transition = [&](const Transition& t) {
    ++counts[t.action];
    ++n;
  };
  train(*car, cfg, hooks);
  ASSERT_GT(n, 2500);
  const double expected = static_cast<double>(n) / 25.0;
  double chi2 = 0.0;
  for (long c : counts) {
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // 24 degrees of freedom, 0.999 quantile ~ 51.2.
  EXPECT_LT(chi2, 51.2);
}

TEST(Exploration, GreedyWhenEpsIsZero) {
  auto env = make_brownian_benchmark();
  TrainConfig cfg;
  cfg.episodes = 3;
  cfg.eps_start = cfg.eps_end = 0.0;
  cfg.lambda = cfg.mu = 0.0;
  cfg.batch_data = 1000000;  // never learn, so the policy stays fixed
  cfg.memory_capacity = 1000000;
  cfg.network = {2, 1, 4, 3};
  QNetwork net(cfg.network, input_scaling_for(*env));
  Rng rng(9);
  for (Eigen::Index i = 0; i < net.params().size(); ++i) {
    net.params()[i] = rng.uniform(-2.0, 2.0);
  }
  long steps = 0;
  TrainHooks hooks;
  hooks.on_transition = [&](const Transition& t) {
    ++steps;
    EXPECT_EQ(t.action, net.greedy_action(env->net_input(t.s)));
  };
  train(*env, cfg, net, hooks);
  EXPECT_GT(steps, 0);
  // Ties resolve to the lowest index.
  QNetwork tie(cfg.network, input_scaling_for(*env));
  EXPECT_EQ(tie.greedy_action(env->net_input({1.0, v1(0.0)})), 0u);
}

TEST(Train, ReplayHoldsOnlyEnvironmentTransitions) {
  // Every stored transition must be reproducible by stepping the simulator.
  auto env = make_brownian_benchmark();
  TrainConfig cfg;
  cfg.episodes = 5;
  cfg.network = {2, 1, 4, 3};
  cfg.seed = 21;
  std::vector<Transition> seen;
  TrainHooks hooks;
  hooks.on_transition = [&](const Transition& t) { seen.push_back(t); };
  train(*env, cfg, hooks);
  long ep = 0;
  Rng env_rng = stream(cfg.seed, StreamPurpose::kEnvironment, 0);
  for (const Transition& t : seen) {
    const auto r = sde::step_augmented(env->system(), env->safe_set(), t.s, t.action,
                                       env->settings().step_config(), env_rng);
    EXPECT_EQ(r.next.x, t.next.x);
    EXPECT_EQ(r.reward, t.reward);
    EXPECT_EQ(r.terminal, t.terminal);
    if (t.terminal) {
      env_rng = stream(cfg.seed, StreamPurpose::kEnvironment, static_cast<std::uint64_t>(++ep));
    }
  }
  EXPECT_EQ(ep, 5);
}

TEST(Train, SmokeRunIsReproducible) {
  auto env = make_brownian_benchmark();
  TrainConfig cfg;
  cfg.episodes = 40;
  cfg.lambda = 0.1;
  cfg.mu = 0.1;
  cfg.boundary_epsilon = 0.05;
  cfg.seed = 77;
  cfg.network = {2, 2, 8, 3};
  const auto a = train(*env, cfg);
  const auto b = train(*env, cfg);
  ASSERT_EQ(a.metrics.size(), 40u);
  EXPECT_EQ(a.net.params(), b.net.params());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_EQ(a.metrics[i].reward, b.metrics[i].reward);
    EXPECT_EQ(a.metrics[i].l_pde, b.metrics[i].l_pde);
    EXPECT_TRUE(a.metrics[i].reward == 0.0 || a.metrics[i].reward == 1.0);
  }
  EXPECT_GT(a.learn_steps, 0);
}

TEST(Train, TwoLearningRatesRunWithoutNan) {
  auto env = make_brownian_benchmark();
  for (double lr : {5e-4, 5e-5}) {
    TrainConfig cfg;
    cfg.episodes = 30;
    cfg.learning_rate = lr;
    cfg.network = {2, 3, 32, 3};
    cfg.seed = 3;
    const auto res = train(*env, cfg);
    EXPECT_TRUE(res.net.params().allFinite());
  }
}

TEST(Train, RejectsBadConfig) {
  auto env = make_brownian_benchmark();
  TrainConfig cfg;
  cfg.eta = 0.0;
  EXPECT_THROW(train(*env, cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_pde = 0;
  EXPECT_THROW(train(*env, cfg), ConfigError);
}
