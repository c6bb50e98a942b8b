#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pirl/environment.hpp"
#include "pirl/qnet.hpp"
#include "pirl/sde.hpp"

namespace pirl::training {

using qnet::Matrix;
using qnet::QNetwork;
using qnet::Vector;
using sde::AugmentedState;
using sde::Transition;

/// Fixed-capacity FIFO ring buffer of environment transitions.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const;

  /// `n` distinct transitions chosen uniformly. Throws ContractViolation when
  /// n exceeds size().
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest item once full
  std::vector<Transition> items_;
};

enum class PdeGradMode { kExact, kStopHessian };

struct TrainConfig {
  long episodes = 1000;
  double lambda = 1e-4;
  double mu = 1e-4;
  double eta = 0.005;
  double learning_rate = 5e-4;
  /// Step size reached at the last episode by linear decay; negative keeps
  /// learning_rate constant.
  double learning_rate_final = -1.0;
  std::string optimizer = "adam";
  std::size_t batch_data = 32;
  std::size_t batch_pde = 32;
  std::size_t batch_boundary = 32;
  std::size_t memory_capacity = 100000;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay_fraction = 0.2;
  /// Initial horizon for P_D; negative means tau_max.
  double tau_d = -1.0;
  /// Draw the initial horizon uniformly from [0, tau_d] instead of fixing it.
  bool random_initial_horizon = false;
  /// Mollifier width for boundary targets l_eps.
  double boundary_epsilon = 0.0;
  /// Include sigma in the PDE residual.
  bool pde_diffusion = true;
  PdeGradMode pde_grad_mode = PdeGradMode::kExact;
  /// Learning starts once the memory holds this many transitions (at least
  /// batch_data).
  std::size_t learn_start = 0;
  /// Environment steps between gradient steps.
  int learn_every = 1;
  std::size_t moving_window = 500;
  std::uint64_t seed = 0;
  qnet::NetworkSpec network;

  double initial_horizon(const EnvSettings& env) const { return tau_d < 0.0 ? env.tau_max : tau_d; }
  void validate() const;
};

struct LossReport {
  double l_data = 0.0;
  double l_pde = 0.0;
  double l_boundary = 0.0;
  double total = 0.0;
  double mean_abs_wp = 0.0;
  double mean_abs_wb = 0.0;
  double mean_target = 0.0;
};

/// Linear decay from eps_start to eps_end over the first
/// eps_decay_fraction * episodes episodes.
double exploration_rate(const TrainConfig& config, long episode);

/// Optimizer step size used during `episode`.
double learning_rate_at(const TrainConfig& config, long episode);

// Sampling distributions -----------------------------------------------------

/// P_D: h = tau_d (or uniform on [0, tau_d]), x from Omega_D.
AugmentedState sample_initial_state(const Environment& env, const TrainConfig& config, Rng& rng);
/// P_P: h uniform on [0, tau_max], x uniform on Omega_P.
AugmentedState sample_collocation(const Environment& env, Rng& rng);

struct BoundarySample {
  AugmentedState s;
  /// 1: h = 0 with x in Omega_P; 2: lateral boundary x in Omega_B.
  int branch = 1;
};

/// P_B: equal mixture of the terminal-time and lateral-boundary branches.
BoundarySample sample_boundary(const Environment& env, Rng& rng);

// Losses -----------------------------------------------------------------------

/// y_j = r_j for terminal transitions, r_j + max_a Q_target(s'_j, a) otherwise.
std::vector<double> dqn_targets(const Environment& env, const std::vector<const Transition*>& batch,
                                const QNetwork& target);

/// Network inputs [h, features] stacked as columns.
Matrix input_batch(const Environment& env, const std::vector<AugmentedState>& states);

/// Mean of (y_j - Q(s_j, a_j))^2; accumulates its parameter gradient into
/// `grad` (scaled by `weight`) when non-null.
double loss_data(const QNetwork& net, const Matrix& inputs, const std::vector<std::size_t>& actions,
                 const std::vector<double>& targets, Vector* grad = nullptr, double weight = 1.0);

/// W_P(s, a) = dQ/ds . f~ + 1/2 sum_i sigma~_i^T (d2Q/ds2) sigma~_i.
double pde_residual(const QNetwork& net, const Environment& env, const AugmentedState& s,
                    std::size_t action, bool with_diffusion);

struct PdeBatch {
  std::vector<double> residuals;
  std::vector<std::size_t> actions;
  double loss = 0.0;
};

/// Mean squared W_P at the greedy actions (held fixed while differentiating).
PdeBatch loss_pde(const QNetwork& net, const Environment& env,
                  const std::vector<AugmentedState>& states, bool with_diffusion,
                  PdeGradMode mode = PdeGradMode::kExact, Vector* grad = nullptr,
                  double weight = 1.0);

struct BoundaryBatch {
  std::vector<double> residuals;
  double loss = 0.0;
};

/// Mean squared W_B = Q(s, a*) - l_eps(x) at the greedy actions.
BoundaryBatch loss_boundary(const QNetwork& net, const Environment& env,
                            const std::vector<AugmentedState>& states, double epsilon,
                            Vector* grad = nullptr, double weight = 1.0);

/// theta_target <- eta theta + (1 - eta) theta_target.
void soft_update(QNetwork& target, const QNetwork& online, double eta);

/// Input normalization from the environment's declared ranges, with h scaled
/// by 1/tau_max.
qnet::InputScaling input_scaling_for(const Environment& env);

// Training loop ------------------------------------------------------------------

struct EpisodeMetrics {
  long episode = 0;
  double reward = 0.0;
  double moving_avg = 0.0;
  double l_data = 0.0;
  double l_pde = 0.0;
  double l_boundary = 0.0;
  double eps_greedy = 0.0;
  double wall_time = 0.0;
  /// max_a Q(s_0, a) at the episode's initial state, and its moving average.
  double q_init = 0.0;
  double q_moving_avg = 0.0;
  long steps = 0;
};

struct TrainHooks {
  /// Called after every episode with the current online network.
  std::function<void(const EpisodeMetrics&, const QNetwork&)> on_episode;
  /// Called for every transition as it enters the replay memory.
  std::function<void(const Transition&)> on_transition;
};

struct TrainResult {
  QNetwork net;
  QNetwork target;
  std::vector<EpisodeMetrics> metrics;
  long learn_steps = 0;
};

/// DQN training with the physics-informed losses: epsilon-greedy collection into a
/// replay memory and one combined gradient step L_D + lambda L_P + mu L_B per
/// `learn_every` environment steps, followed by a soft target update.
/// Throws NumericAbort when a loss becomes non-finite.
TrainResult train(const Environment& env, const TrainConfig& config, const TrainHooks& hooks = {});

/// Same, continuing from an existing network.
TrainResult train(const Environment& env, const TrainConfig& config, QNetwork initial,
                  const TrainHooks& hooks = {});

/// One learning step on the given batches; returns the loss breakdown and
/// writes the full gradient into `grad`.
LossReport combined_loss(const QNetwork& net, const QNetwork& target, const Environment& env,
                         const TrainConfig& config, const std::vector<const Transition*>& data,
                         const std::vector<AugmentedState>& collocation,
                         const std::vector<AugmentedState>& boundary, Vector& grad);

}  // namespace pirl::training
