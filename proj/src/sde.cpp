#include "pirl/sde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>
#include <vector>

#include "pirl/errors.hpp"

namespace pirl::sde {

double mollifier_from_distance(double signed_distance, double epsilon) {
  if (epsilon <= 0.0) {
    return signed_distance > 0.0 ? 1.0 : 0.0;
  }
  return std::clamp(signed_distance / epsilon, 0.0, 1.0);
}

double SafeSet::mollifier(const Vector& x, double epsilon) const {
  return mollifier_from_distance(signed_distance(x), epsilon);
}

bool is_absorbing(const AugmentedState& s, const SafeSet& safe_set) {
  return s.horizon < -kHorizonTolerance || !safe_set.contains(s.x);
}

bool reward_eligible(double horizon, double dt) {
  return horizon >= -kHorizonTolerance && horizon < dt - kHorizonTolerance;
}

long control_steps(double tau, double dt) {
  if (tau < -kHorizonTolerance) {
    return -1;
  }
  return static_cast<long>(std::floor((tau + kHorizonTolerance) / dt));
}

Vector step_euler_maruyama(const SdeSystem& system, const Vector& x, std::size_t action,
                           double dt, Rng& rng, int n_substeps) {
  if (!(dt > 0.0) || n_substeps < 1) {
    throw ContractViolation("step_euler_maruyama: dt must be positive and n_substeps >= 1");
  }
  if (action >= system.num_actions()) {
    throw ContractViolation("step_euler_maruyama: action index out of range");
  }
  const double h = dt / n_substeps;
  const double sqrt_h = std::sqrt(h);
  const std::size_t w = system.noise_dim();
  Vector state = x;
  Vector dw(w);
  for (int k = 0; k < n_substeps; ++k) {
    Vector next = state + system.drift(state, action) * h;
    if (w > 0) {
      for (std::size_t j = 0; j < w; ++j) {
        dw[static_cast<Eigen::Index>(j)] = sqrt_h * rng.normal();
      }
      next += system.diffusion(state, action) * dw;
    }
    system.project(next);
    if (!next.allFinite()) {
      std::ostringstream msg;
      msg << "integration diverged at substep " << k << ", state [" << state.transpose() << "]";
      throw IntegrationDiverged(msg.str(), std::vector<double>(state.data(), state.data() + state.size()));
    }
    state = std::move(next);
  }
  return state;
}

double reward_mollified(const AugmentedState& s, const SafeSet& safe_set, double dt,
                        double epsilon) {
  if (!reward_eligible(s.horizon, dt)) {
    return 0.0;
  }
  return safe_set.mollifier(s.x, epsilon);
}

double reward_binary(const AugmentedState& s, const SafeSet& safe_set, double dt) {
  return reward_mollified(s, safe_set, dt, 0.0);
}

StepResult step_augmented(const SdeSystem& system, const SafeSet& safe_set,
                          const AugmentedState& s, std::size_t action,
                          const StepConfig& config, Rng& rng) {
  if (is_absorbing(s, safe_set)) {
    throw ContractViolation("step_augmented: state is absorbing");
  }
  StepResult result;
  result.reward = reward_mollified(s, safe_set, config.dt, config.reward_epsilon);
  result.next.horizon = s.horizon - config.dt;
  result.next.x = step_euler_maruyama(system, s.x, action, config.dt, rng, config.n_substeps);
  result.terminal = is_absorbing(result.next, safe_set);
  return result;
}

EpisodeOutcome run_episode(const SdeSystem& system, const SafeSet& safe_set,
                           const Policy& policy, const AugmentedState& s0,
                           const StepConfig& config, Rng& rng) {
  EpisodeOutcome out;
  AugmentedState s = s0;
  while (!is_absorbing(s, safe_set)) {
    StepResult r = step_augmented(system, safe_set, s, policy(s), config, rng);
    out.total_reward += r.reward;
    out.reward_collected = out.reward_collected || r.reward > 0.0;
    ++out.steps;
    s = std::move(r.next);
  }
  return out;
}

McEstimate binomial_estimate(long successes, long n) {
  McEstimate e;
  e.n = n;
  if (n <= 0) {
    return e;
  }
  const double p = static_cast<double>(successes) / static_cast<double>(n);
  e.estimate = p;
  e.half_width_95 = 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return e;
}

bool safety_rollout(const SdeSystem& system, const SafeSet& safe_set, const Policy& policy,
                    const AugmentedState& s0, double dt, int n_substeps, Rng& rng) {
  const long steps = control_steps(s0.horizon, dt);
  if (steps < 0 || !safe_set.contains(s0.x)) {
    return false;
  }
  AugmentedState s = s0;
  for (long k = 1; k <= steps; ++k) {
    const std::size_t a = policy(s);
    s.x = step_euler_maruyama(system, s.x, a, dt, rng, n_substeps);
    s.horizon = s0.horizon - static_cast<double>(k) * dt;
    if (!safe_set.contains(s.x)) {
      return false;
    }
  }
  return true;
}

McEstimate mc_safety_probability(const SdeSystem& system, const SafeSet& safe_set,
                                 const Policy& policy, const AugmentedState& s0,
                                 const McOptions& options, const Rng& rng) {
  if (options.n_rollouts < 1) {
    throw ContractViolation("mc_safety_probability: n_rollouts must be >= 1");
  }
  const long n = options.n_rollouts;
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(n)));
  std::vector<long> successes(threads, 0);
  auto worker = [&](unsigned t) {
    long count = 0;
    for (long i = t; i < n; i += threads) {
      Rng r = rng.split(static_cast<std::uint64_t>(i));
      if (safety_rollout(system, safe_set, policy, s0, options.dt, options.n_substeps, r)) {
        ++count;
      }
    }
    successes[t] = count;
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back(worker, t);
    }
    for (auto& th : pool) {
      th.join();
    }
  }
  long total = 0;
  for (long c : successes) {
    total += c;
  }
  return binomial_estimate(total, n);
}

}  // namespace pirl::sde
