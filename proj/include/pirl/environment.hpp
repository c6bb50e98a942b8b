#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pirl/region.hpp"
#include "pirl/sde.hpp"

namespace pirl {

struct EnvSettings {
  double dt = 0.02;
  int n_substeps = 1;
  /// Largest outlook horizon the learner is asked about.
  double tau_max = 1.0;
  /// Mollifier width used for the environment reward (0 = binary reward).
  double reward_epsilon = 0.0;

  sde::StepConfig step_config() const { return {dt, n_substeps, reward_epsilon}; }
  void validate() const;
};

struct FeatureRange {
  double lo = -1.0;
  double hi = 1.0;
};

/// A simulator bundled with everything the learner needs to talk to it: the
/// observation map from physical state to network features, the PDE
/// coefficients expressed in feature coordinates, and the sampling regions
/// for initial states (Omega_D), collocation points (Omega_P) and the lateral
/// boundary (Omega_B), all in physical coordinates.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string kind() const = 0;
  virtual const sde::SdeSystem& system() const = 0;
  virtual const sde::SafeSet& safe_set() const = 0;

  virtual std::vector<std::string> state_names() const = 0;
  virtual std::vector<std::string> feature_names() const = 0;
  std::size_t feature_dim() const { return feature_names().size(); }
  virtual sde::Vector features(const sde::Vector& x) const = 0;
  /// Declared per-feature ranges used for input normalization.
  virtual std::vector<FeatureRange> feature_ranges() const = 0;

  /// Drift (length feature_dim) and diffusion (feature_dim x w) of the
  /// feature vector under `action`. Diffusion may have zero columns.
  virtual void pde_coefficients(const sde::Vector& x, std::size_t action, bool with_diffusion,
                                sde::Vector& drift, sde::Matrix& diffusion) const = 0;

  /// Fresh initial state for a rollout; defaults to sampling Omega_D.
  virtual sde::Vector sample_initial(Rng& rng) const { return initial_region().sample(rng); }

  virtual const Region& initial_region() const = 0;
  virtual const Region& interior_region() const = 0;
  virtual const Region& boundary_region() const = 0;

  /// Physical state used for slices when a coordinate is not specified.
  virtual sde::Vector reference_state() const = 0;

  const EnvSettings& settings() const { return settings_; }
  EnvSettings& mutable_settings() { return settings_; }

  /// Network input [h, features(x)].
  sde::Vector net_input(const sde::AugmentedState& s) const;
  /// Index of `name` in state_names(), or -1.
  int state_index(const std::string& name) const;

 protected:
  explicit Environment(EnvSettings settings) : settings_(settings) { settings_.validate(); }

 private:
  EnvSettings settings_;
};

// ---------------------------------------------------------------------------
// 1D Brownian benchmark: dX = u dt + sigma dW, u in {-u_max, 0, +u_max},
// C = (-b, b).

struct BrownianConfig {
  double half_width = 1.0;
  double sigma = 0.5;
  double u_max = 0.5;
  double initial_low = -0.9;
  double initial_high = 0.9;
  EnvSettings settings{0.02, 1, 1.0, 0.0};
};

class BrownianSystem final : public sde::SdeSystem {
 public:
  BrownianSystem(double sigma, double u_max) : sigma_(sigma), u_max_(u_max) {}
  std::size_t state_dim() const override { return 1; }
  std::size_t noise_dim() const override { return sigma_ == 0.0 ? 0 : 1; }
  std::size_t num_actions() const override { return 3; }
  sde::Vector drift(const sde::Vector& x, std::size_t action) const override;
  sde::Matrix diffusion(const sde::Vector& x, std::size_t action) const override;
  std::string action_label(std::size_t action) const override;
  double control(std::size_t action) const;
  double sigma() const { return sigma_; }

 private:
  double sigma_;
  double u_max_;
};

class IntervalSafeSet final : public sde::SafeSet {
 public:
  explicit IntervalSafeSet(double half_width) : half_width_(half_width) {}
  double signed_distance(const sde::Vector& x) const override {
    return half_width_ - std::abs(x[0]);
  }
  double half_width() const { return half_width_; }

 private:
  double half_width_;
};

class BrownianEnvironment final : public Environment {
 public:
  explicit BrownianEnvironment(const BrownianConfig& config);

  std::string kind() const override { return "brownian"; }
  const sde::SdeSystem& system() const override { return system_; }
  const BrownianSystem& brownian_system() const { return system_; }
  const sde::SafeSet& safe_set() const override { return safe_set_; }
  std::vector<std::string> state_names() const override { return {"x"}; }
  std::vector<std::string> feature_names() const override { return {"x"}; }
  sde::Vector features(const sde::Vector& x) const override { return x; }
  std::vector<FeatureRange> feature_ranges() const override;
  void pde_coefficients(const sde::Vector& x, std::size_t action, bool with_diffusion,
                        sde::Vector& drift, sde::Matrix& diffusion) const override;
  const Region& initial_region() const override { return initial_; }
  const Region& interior_region() const override { return interior_; }
  const Region& boundary_region() const override { return boundary_; }
  sde::Vector reference_state() const override { return sde::Vector::Zero(1); }

  const BrownianConfig& config() const { return config_; }

 private:
  BrownianConfig config_;
  BrownianSystem system_;
  IntervalSafeSet safe_set_;
  Region initial_;
  Region interior_;
  Region boundary_;
};

std::unique_ptr<BrownianEnvironment> make_brownian_benchmark(const BrownianConfig& config = {});

}  // namespace pirl
