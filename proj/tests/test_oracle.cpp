#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "pirl/errors.hpp"
#include "pirl/oracle.hpp"
#include "pirl/training.hpp"
#include "pirl/vehicle.hpp"

using namespace pirl;
using namespace pirl::oracle;
using sde::Vector;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

// Survival of x + s W in (-b, b) by the method of images: alternating-sign
// reflections of the start point across the two walls.
double survival_images(double x, double tau, double b, double sigma) {
  const double s = sigma * std::sqrt(tau);
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  double p = 0.0;
  for (int k = -30; k <= 30; ++k) {
    const double xk = (k % 2 == 0 ? x : -x) + 2.0 * k * b;
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    p += sign * (cdf((b - xk) / s) - cdf((-b - xk) / s));
  }
  return p;
}

std::vector<Axis> line(std::size_t points, double half = 1.0) { return {{"x", -half, half, points}}; }

// Two independent scaled Brownian coordinates on a square.
class PlanarBrownian final : public sde::SdeSystem {
 public:
  explicit PlanarBrownian(double sigma) : sigma_(sigma) {}
  std::size_t state_dim() const override { return 2; }
  std::size_t noise_dim() const override { return 2; }
  std::size_t num_actions() const override { return 1; }
  Vector drift(const Vector&, std::size_t) const override { return Vector::Zero(2); }
  sde::Matrix diffusion(const Vector&, std::size_t) const override {
    return sigma_ * sde::Matrix::Identity(2, 2);
  }

 private:
  double sigma_;
};

class Square final : public sde::SafeSet {
 public:
  double signed_distance(const Vector& x) const override {
    return std::min(1.0 - std::abs(x[0]), 1.0 - std::abs(x[1]));
  }
};

class Correlated final : public sde::SdeSystem {
 public:
  std::size_t state_dim() const override { return 2; }
  std::size_t noise_dim() const override { return 1; }
  std::size_t num_actions() const override { return 1; }
  Vector drift(const Vector&, std::size_t) const override { return Vector::Zero(2); }
  sde::Matrix diffusion(const Vector&, std::size_t) const override { return sde::Matrix::Ones(2, 1); }
};

SafetyField uncontrolled_field(const BrownianEnvironment& env, std::size_t points, double epsilon = 0.0) {
  FdOptions opt;
  opt.axes = line(points);
  opt.tau_max = 1.0;
  opt.epsilon = epsilon;
  opt.fixed_action = 1;
  opt.snapshots = {0.0, 0.25, 0.5, 1.0};
  return solve_hjb_fd(env.system(), env.safe_set(), opt);
}

}  // namespace

TEST(SurvivalSeries, MatchesImageSum) {
  for (double tau : {0.05, 0.3, 1.0, 3.0}) {
    for (double x : {-0.95, -0.5, 0.0, 0.3, 0.8}) {
      EXPECT_NEAR(dirichlet_survival_series(x, tau, 1.0, 0.5), survival_images(x, tau, 1.0, 0.5), 1e-12)
          << "tau=" << tau << " x=" << x;
    }
  }
  EXPECT_NEAR(dirichlet_survival_series(0.0, 1.0, 1.0, 0.5), 0.9090, 5e-4);
}

TEST(SurvivalSeries, TrivialCases) {
  EXPECT_EQ(dirichlet_survival_series(0.3, 0.0, 1.0, 0.5), 1.0);
  EXPECT_EQ(dirichlet_survival_series(1.0, 0.5, 1.0, 0.5), 0.0);
  EXPECT_EQ(dirichlet_survival_series(0.2, 0.5, 1.0, 0.0), 1.0);
}

TEST(FdOracle, StationaryWithoutNoiseOrDrift) {
  BrownianConfig cfg;
  cfg.sigma = 0.0;
  auto env = make_brownian_benchmark(cfg);
  FdOptions opt;
  opt.axes = line(41);
  opt.fixed_action = 1;
  opt.dtau = 0.01;
  const SafetyField f = solve_hjb_fd(env->system(), env->safe_set(), opt);
  ASSERT_EQ(f.taus().size(), 2u);
  for (std::size_t n = 0; n < f.num_nodes(); ++n) {
    EXPECT_EQ(f.value(1, n), f.value(0, n));
  }
}

TEST(FdOracle, UncontrolledMatchesSeries) {
  auto env = make_brownian_benchmark();
  const SafetyField f = uncontrolled_field(*env, 401);
  EXPECT_NEAR(f.interpolate(1.0, v1(0.0)), dirichlet_survival_series(0.0, 1.0, 1.0, 0.5), 1e-3);
  for (double x : {-0.8, -0.4, 0.5, 0.9}) {
    EXPECT_NEAR(f.interpolate(1.0, v1(x)), dirichlet_survival_series(x, 1.0, 1.0, 0.5), 2e-3) << x;
  }
}

TEST(FdOracle, RefinementReducesError) {
  auto env = make_brownian_benchmark();
  const double exact = dirichlet_survival_series(0.5, 0.5, 1.0, 0.5);
  double prev = INFINITY;
  for (std::size_t points : {21, 41, 81, 161}) {
    const double err = std::abs(uncontrolled_field(*env, points).interpolate(0.5, v1(0.5)) - exact);
    EXPECT_LT(err, prev) << points;
    prev = err;
  }
}

TEST(FdOracle, BoundsAndMonotoneInHorizon) {
  auto env = make_brownian_benchmark();
  FdOptions opt;
  opt.axes = line(101);
  opt.snapshots = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  const SafetyField f = solve_hjb_fd(env->system(), env->safe_set(), opt);
  for (std::size_t n = 0; n < f.num_nodes(); ++n) {
    for (std::size_t k = 0; k < f.taus().size(); ++k) {
      EXPECT_GE(f.value(k, n), 0.0);
      EXPECT_LE(f.value(k, n), 1.0);
      if (k > 0) {
        EXPECT_LE(f.value(k, n), f.value(k - 1, n) + 1e-15);
      }
    }
  }
}

TEST(FdOracle, ControlNeverHurts) {
  auto env = make_brownian_benchmark();
  FdOptions opt;
  opt.axes = line(101);
  opt.dtau = 1e-3;
  const SafetyField best = solve_hjb_fd(env->system(), env->safe_set(), opt);
  for (std::size_t a = 0; a < 3; ++a) {
    opt.fixed_action = a;
    const SafetyField fixed = solve_hjb_fd(env->system(), env->safe_set(), opt);
    for (std::size_t n = 0; n < best.num_nodes(); ++n) {
      EXPECT_GE(best.value(1, n), fixed.value(1, n));
    }
  }
  // Steering toward the centre beats doing nothing near the edges.
  EXPECT_GT(best.interpolate(1.0, v1(0.8)), uncontrolled_field(*env, 101).interpolate(1.0, v1(0.8)) + 0.05);
}

TEST(FdOracle, DefaultEpsilonIsTwoCells) {
  auto env = make_brownian_benchmark();
  FdOptions opt;
  opt.axes = line(101);
  opt.tau_max = 0.1;
  const SafetyField f = solve_hjb_fd(env->system(), env->safe_set(), opt);
  EXPECT_DOUBLE_EQ(f.epsilon, 0.04);
  // Node one cell inside the wall starts at l_eps = 0.5.
  EXPECT_NEAR(f.value(0, 99), 0.5, 1e-12);
  EXPECT_EQ(f.value(0, 50), 1.0);
}

TEST(FdOracle, TooLargeStepReportsStableStep) {
  auto env = make_brownian_benchmark();
  FdOptions opt;
  opt.axes = line(201);
  opt.dtau = 0.01;
  try {
    solve_hjb_fd(env->system(), env->safe_set(), opt);
    FAIL() << "expected CflError";
  } catch (const CflError& e) {
    const double limit = max_stable_dtau(env->system(), env->safe_set(), opt.axes, std::nullopt);
    // 1 / (sigma^2 / dx^2 + u_max / dx) on dx = 0.01
    EXPECT_NEAR(limit, 1.0 / (0.25 / 1e-4 + 0.5 / 0.01), 1e-15);
    EXPECT_GT(e.suggested_dtau(), 0.0);
    EXPECT_LE(e.suggested_dtau(), limit);
    opt.tau_max = e.suggested_dtau() * 10;
    opt.dtau = e.suggested_dtau();
    EXPECT_NO_THROW(solve_hjb_fd(env->system(), env->safe_set(), opt));
  }
}

TEST(FdOracle, RejectsUnsupportedProblems) {
  auto vehicle = vehicle::make_cornering_env();
  FdOptions opt;
  opt.axes = line(11);
  EXPECT_THROW(solve_hjb_fd(vehicle->system(), vehicle->safe_set(), opt), ConfigError);

  auto env = make_brownian_benchmark();
  opt.axes = line(11, 0.5);
  EXPECT_THROW(solve_hjb_fd(env->system(), env->safe_set(), opt), ConfigError);

  opt.axes = {{"x", -1, 1, 11}, {"y", -1, 1, 11}};
  EXPECT_THROW(solve_hjb_fd(env->system(), env->safe_set(), opt), DimensionMismatch);
  EXPECT_THROW(solve_hjb_fd(Correlated(), Square(), opt), ConfigError);
}

TEST(FdOracle, ProductOfIndependentCoordinates) {
  PlanarBrownian sys(0.5);
  Square box;
  FdOptions opt;
  opt.axes = {{"x", -1, 1, 81}, {"y", -1, 1, 81}};
  opt.tau_max = 0.5;
  opt.epsilon = 0.0;
  const SafetyField f = solve_hjb_fd(sys, box, opt);
  for (double x : {0.0, 0.4, -0.7}) {
    for (double y : {0.0, 0.5}) {
      Vector p(2);
      p << x, y;
      const double exact = dirichlet_survival_series(x, 0.5, 1.0, 0.5) * dirichlet_survival_series(y, 0.5, 1.0, 0.5);
      EXPECT_NEAR(f.interpolate(0.5, p), exact, 5e-3) << x << "," << y;
    }
  }
}

TEST(SafetyFieldGrid, FlattenRoundTripAndBilinearExactness) {
  SafetyField f({{"a", 0, 2, 5}, {"b", -1, 1, 3}}, {0.0, 1.0});
  for (std::size_t n = 0; n < f.num_nodes(); ++n) {
    EXPECT_EQ(f.flatten(f.unflatten(n)), n);
    const Vector p = f.node_point(n);
    f.value(0, n) = 1 + 2 * p[0] - p[1] + 0.5 * p[0] * p[1];
    f.value(1, n) = 3.0;
  }
  Vector q(2);
  q << 1.3, 0.25;
  const double bilinear = 1 + 2 * 1.3 - 0.25 + 0.5 * 1.3 * 0.25;
  EXPECT_NEAR(f.interpolate(0.0, q), bilinear, 1e-12);
  EXPECT_NEAR(f.interpolate(0.25, q), 0.75 * bilinear + 0.25 * 3.0, 1e-12);
  EXPECT_EQ(f.nearest_tau(0.7), 1u);
  EXPECT_THROW(f.interpolate(0.0, v1(0.0)), DimensionMismatch);
}

TEST(SafetyFieldGrid, JsonRoundTripIsByteStable) {
  auto env = make_brownian_benchmark();
  SafetyField f = uncontrolled_field(*env, 21, -1.0);
  f.system_id = "brownian";
  const std::string text = f.to_json();
  const SafetyField g = SafetyField::from_json(text);
  EXPECT_EQ(g.to_json(), text);
  EXPECT_EQ(g.policy_id, "action:1");
  for (std::size_t k = 0; k < f.taus().size(); ++k) {
    for (std::size_t n = 0; n < f.num_nodes(); ++n) {
      EXPECT_EQ(g.value(k, n), f.value(k, n));
    }
  }
  const auto path = std::filesystem::temp_directory_path() / "pirl_field_test.json";
  f.save(path);
  EXPECT_EQ(SafetyField::load(path).to_json(), text);
  std::filesystem::remove(path);
  EXPECT_THROW(SafetyField::from_json("{\"format\":\"other\"}"), IoError);
  EXPECT_THROW(SafetyField::from_json("not json"), IoError);
}

TEST(FieldComparison, ExactAndConstantPredictors) {
  auto env = make_brownian_benchmark();
  const SafetyField f = uncontrolled_field(*env, 41);
  const ValueFn exact = [&f](double tau, const Vector& x) { return f.interpolate(tau, x); };
  const CompareReport zero = compare_field(exact, f, env->safe_set(), 1.0);
  EXPECT_EQ(zero.count, 39u);
  EXPECT_NEAR(zero.mae, 0.0, 1e-15);
  EXPECT_NEAR(zero.max_abs, 0.0, 1e-15);

  const ValueFn half = [](double, const Vector&) { return 0.5; };
  const CompareReport r = compare_field(half, f, env->safe_set(), 1.0, 0.1);
  double sum = 0.0;
  double worst = 0.0;
  std::size_t band = 0;
  for (std::size_t n = 1; n + 1 < f.num_nodes(); ++n) {
    const double e = std::abs(0.5 - f.value(3, n));
    sum += e;
    worst = std::max(worst, e);
    band += env->safe_set().signed_distance(f.node_point(n)) < 0.1 ? 1 : 0;
  }
  EXPECT_NEAR(r.mae, sum / 39.0, 1e-14);
  EXPECT_DOUBLE_EQ(r.max_abs, worst);
  EXPECT_EQ(r.count_band, band);
  EXPECT_EQ(r.count_band + r.count_interior, r.count);

  const CompareReport at = compare_at(half, f, env->safe_set(), {{1.0, v1(0.0)}, {0.5, v1(0.5)}});
  EXPECT_EQ(at.count, 2u);
  EXPECT_NEAR(at.mae, 0.5 * (std::abs(0.5 - f.interpolate(1.0, v1(0.0))) +
                             std::abs(0.5 - f.interpolate(0.5, v1(0.5)))), 1e-15);
}

TEST(FieldComparison, DimensionCheck) {
  auto env = make_brownian_benchmark();
  auto vehicle = vehicle::make_cornering_env();
  const SafetyField f = uncontrolled_field(*env, 21);
  EXPECT_NO_THROW(check_field_matches(f, *env));
  EXPECT_THROW(check_field_matches(f, *vehicle), DimensionMismatch);
}

TEST(PolicyMonteCarlo, DeterministicDynamics) {
  BrownianConfig cfg;
  cfg.sigma = 0.0;
  auto env = make_brownian_benchmark(cfg);
  McRequest req{50, 1, true};
  const Rng rng(7);
  // tau = 1 at u = 0.5 moves 0.5: from 0.6 it leaves, from 0.0 it stays.
  const auto est = evaluate_policy_mc(*env, constant_policy(2), {{1.0, v1(0.0)}, {1.0, v1(0.6)}}, req, rng);
  EXPECT_EQ(est[0].estimate, 1.0);
  EXPECT_EQ(est[1].estimate, 0.0);
  EXPECT_EQ(evaluate_policy_mc(*env, constant_policy(1), {{1.0, v1(0.6)}}, req, rng)[0].estimate, 1.0);
}

TEST(PolicyMonteCarlo, AgreesWithSeriesWithinDiscreteMonitoringBias) {
  auto env = make_brownian_benchmark();
  McRequest req{4000, 2, true};
  const auto est = evaluate_policy_mc(*env, constant_policy(1), {{1.0, v1(0.0)}}, req, Rng(11));
  // Monitoring only at grid times overestimates survival.
  const double series = dirichlet_survival_series(0.0, 1.0, 1.0, 0.5);
  EXPECT_GT(est[0].estimate, series - est[0].half_width_95);
  EXPECT_LT(est[0].estimate, series + 0.04);
}

TEST(PolicyMonteCarlo, ThreadCountAndCommonNoise) {
  auto env = make_brownian_benchmark();
  const std::vector<sde::AugmentedState> states{{1.0, v1(0.2)}, {1.0, v1(0.2)}};
  const Rng rng(3);
  const auto a = evaluate_policy_mc(*env, constant_policy(0), states, {300, 1, true}, rng);
  const auto b = evaluate_policy_mc(*env, constant_policy(0), states, {300, 3, true}, rng);
  EXPECT_EQ(a[0].estimate, b[0].estimate);
  EXPECT_EQ(a[0].estimate, a[1].estimate);
  const auto c = evaluate_policy_mc(*env, constant_policy(0), states, {300, 1, false}, rng);
  EXPECT_NE(c[0].estimate, c[1].estimate);
}

TEST(PolicyMonteCarlo, PairedComparison) {
  auto env = make_brownian_benchmark();
  auto initial = [](Rng& r) { return sde::AugmentedState{1.0, v1(r.uniform(-0.9, 0.9))}; };
  const PairedEstimate same = paired_safety(*env, constant_policy(1), constant_policy(1), initial, 200, Rng(5));
  EXPECT_EQ(same.diff, 0.0);
  EXPECT_EQ(same.diff_half_width_95, 0.0);

  const sde::Policy centering = [](const sde::AugmentedState& s) -> std::size_t {
    return s.x[0] > 0 ? 0 : 2;
  };
  const PairedEstimate p = paired_safety(*env, centering, constant_policy(1), initial, 2000, Rng(5), 2);
  EXPECT_NEAR(p.diff, p.a.estimate - p.b.estimate, 1e-12);
  EXPECT_GT(p.diff - p.diff_half_width_95, 0.0);
  const PairedEstimate serial = paired_safety(*env, centering, constant_policy(1), initial, 2000, Rng(5), 1);
  EXPECT_EQ(serial.diff, p.diff);
}

TEST(PolicyMonteCarlo, ValueFunctionIsMaxOverActions) {
  auto env = make_brownian_benchmark();
  qnet::NetworkSpec spec{2, 1, 4, 3};
  qnet::QNetwork net(spec, training::input_scaling_for(*env));
  net.bias(1) << -1.0, 2.0, 0.5;
  const ValueFn v = value_function(net, *env);
  EXPECT_NEAR(v(0.3, v1(0.1)), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_EQ(greedy_policy(net, *env)({0.3, v1(0.1)}), 1u);
}

TEST(Heatmap, CsvLayout) {
  const auto path = std::filesystem::temp_directory_path() / "pirl_heatmap_test.csv";
  write_heatmap_csv(path, "e", {-1.0, 0.5}, "psi", {0.0, 0.25, 2.0}, {{1, 2}, {3, 4}, {5, 0.125}});
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  EXPECT_EQ(buf.str(), "psi\\e,-1,0.5\n0,1,2\n0.25,3,4\n2,5,0.125\n");
  std::filesystem::remove(path);
  EXPECT_THROW(write_heatmap_csv(path, "e", {1.0}, "psi", {0.0}, {{1, 2}}), DimensionMismatch);
}

TEST(PolicyMonteCarlo, MonitoringBiasShrinksWithStepSize) {
  const double series = dirichlet_survival_series(0.0, 1.0, 1.0, 0.5);
  auto gap = [&](double dt) {
    BrownianConfig c;
    c.u_max = 0.0;
    c.settings.dt = dt;
    auto env = make_brownian_benchmark(c);
    const auto est = evaluate_policy_mc(*env, constant_policy(0), {{1.0, v1(0.0)}}, {20000, 1, true}, Rng(12));
    return est[0].estimate - series;
  };
  const double coarse = gap(0.02);
  const double fine = gap(0.002);
  // Continuity correction: the barrier moves out by about 0.5826 sigma sqrt(dt).
  EXPECT_GT(coarse, 0.008);
  EXPECT_LT(std::abs(fine), 0.5 * coarse);
}
