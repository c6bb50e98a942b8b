#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "pirl/rng.hpp"

namespace pirl::sde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Controlled SDE dX = f(X, u) dt + sigma(X, u) dW over a finite action set.
/// Actions are addressed by index; `action_label` describes the control.
class SdeSystem {
 public:
  virtual ~SdeSystem() = default;

  virtual std::size_t state_dim() const = 0;
  virtual std::size_t noise_dim() const = 0;
  virtual std::size_t num_actions() const = 0;

  virtual Vector drift(const Vector& x, std::size_t action) const = 0;
  /// state_dim x noise_dim.
  virtual Matrix diffusion(const Vector& x, std::size_t action) const = 0;

  /// Maps a state back into the model's domain after each substep.
  virtual void project(Vector& /*x*/) const {}

  virtual std::string action_label(std::size_t action) const { return std::to_string(action); }
};

/// Safe set C described through a signed distance (> 0 inside, 0 on the
/// boundary, < 0 outside). The boundary itself is not part of C.
class SafeSet {
 public:
  virtual ~SafeSet() = default;
  virtual double signed_distance(const Vector& x) const = 0;
  bool contains(const Vector& x) const { return signed_distance(x) > 0.0; }
  /// l_eps(x): 1 on C_eps, 0 outside C, linear ramp in between.
  double mollifier(const Vector& x, double epsilon) const;
};

double mollifier_from_distance(double signed_distance, double epsilon);

/// Horizons are compared to the step grid with this absolute slack (seconds)
/// so that h = tau - k*dt round-off does not shift the reward step.
inline constexpr double kHorizonTolerance = 1e-9;

struct AugmentedState {
  double horizon = 0.0;
  Vector x;
};

bool is_absorbing(const AugmentedState& s, const SafeSet& safe_set);
/// h in [0, dt).
bool reward_eligible(double horizon, double dt);
/// N(tau) = floor(tau / dt), robust to round-off at exact multiples.
long control_steps(double tau, double dt);

struct Transition {
  AugmentedState s;
  std::size_t action = 0;
  double reward = 0.0;
  AugmentedState next;
  bool terminal = false;
};

struct StepConfig {
  double dt = 0.02;
  int n_substeps = 1;
  /// Mollifier width for the environment reward; 0 gives the binary reward.
  double reward_epsilon = 0.0;
};

/// One control interval of Euler-Maruyama with the action held constant over
/// `n_substeps` equal substeps. Throws IntegrationDiverged on non-finite output.
Vector step_euler_maruyama(const SdeSystem& system, const Vector& x, std::size_t action,
                           double dt, Rng& rng, int n_substeps = 1);

struct StepResult {
  AugmentedState next;
  double reward = 0.0;
  bool terminal = false;
};

/// Throws ContractViolation when `s` is already absorbing.
StepResult step_augmented(const SdeSystem& system, const SafeSet& safe_set,
                          const AugmentedState& s, std::size_t action,
                          const StepConfig& config, Rng& rng);

double reward_binary(const AugmentedState& s, const SafeSet& safe_set, double dt);
double reward_mollified(const AugmentedState& s, const SafeSet& safe_set, double dt,
                        double epsilon);

using Policy = std::function<std::size_t(const AugmentedState&)>;

struct EpisodeOutcome {
  double total_reward = 0.0;
  long steps = 0;
  bool reward_collected = false;
};

/// Runs the augmented MDP from `s0` until termination, summing rewards.
EpisodeOutcome run_episode(const SdeSystem& system, const SafeSet& safe_set,
                           const Policy& policy, const AugmentedState& s0,
                           const StepConfig& config, Rng& rng);

struct McEstimate {
  double estimate = 0.0;
  double half_width_95 = 0.0;
  long n = 0;
};

McEstimate binomial_estimate(long successes, long n);

struct McOptions {
  double dt = 0.02;
  int n_substeps = 1;
  long n_rollouts = 1000;
  unsigned threads = 1;
};

/// Fraction of rollouts whose states X_0..X_N(tau) all lie in C. Rollout i
/// draws its noise from `rng.split(i)`, so the result does not depend on the
/// number of threads.
McEstimate mc_safety_probability(const SdeSystem& system, const SafeSet& safe_set,
                                 const Policy& policy, const AugmentedState& s0,
                                 const McOptions& options, const Rng& rng);

/// Single rollout of the direct safety definition; true when it stayed safe.
bool safety_rollout(const SdeSystem& system, const SafeSet& safe_set, const Policy& policy,
                    const AugmentedState& s0, double dt, int n_substeps, Rng& rng);

}  // namespace pirl::sde
