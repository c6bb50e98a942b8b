#include "pirl/environment.hpp"

#include <cmath>

#include "pirl/errors.hpp"

namespace pirl {

void EnvSettings::validate() const {
  if (!(dt > 0.0)) {
    throw ConfigError("env: dt must be positive");
  }
  if (n_substeps < 1) {
    throw ConfigError("env: n_substeps must be >= 1");
  }
  if (!(tau_max >= 0.0)) {
    throw ConfigError("env: tau_max must be non-negative");
  }
  if (!(reward_epsilon >= 0.0)) {
    throw ConfigError("env: reward_epsilon must be non-negative");
  }
}

sde::Vector Environment::net_input(const sde::AugmentedState& s) const {
  const sde::Vector f = features(s.x);
  sde::Vector in(f.size() + 1);
  in[0] = s.horizon;
  in.tail(f.size()) = f;
  return in;
}

int Environment::state_index(const std::string& name) const {
  const auto names = state_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

sde::Vector BrownianSystem::drift(const sde::Vector& /*x*/, std::size_t action) const {
  return sde::Vector::Constant(1, control(action));
}

sde::Matrix BrownianSystem::diffusion(const sde::Vector& /*x*/, std::size_t /*action*/) const {
  if (sigma_ == 0.0) {
    return sde::Matrix(1, 0);
  }
  return sde::Matrix::Constant(1, 1, sigma_);
}

double BrownianSystem::control(std::size_t action) const {
  switch (action) {
    case 0:
      return -u_max_;
    case 1:
      return 0.0;
    case 2:
      return u_max_;
    default:
      throw ContractViolation("brownian: action index out of range");
  }
}

std::string BrownianSystem::action_label(std::size_t action) const {
  return "u=" + std::to_string(control(action));
}

BrownianEnvironment::BrownianEnvironment(const BrownianConfig& config)
    : Environment(config.settings),
      config_(config),
      system_(config.sigma, config.u_max),
      safe_set_(config.half_width) {
  if (!(config.half_width > 0.0)) {
    throw ConfigError("brownian: half_width must be positive");
  }
  if (!(config.sigma >= 0.0) || !(config.u_max >= 0.0)) {
    throw ConfigError("brownian: sigma and u_max must be non-negative");
  }
  if (config.initial_low > config.initial_high) {
    throw ConfigError("brownian: initial_low > initial_high");
  }
  const double b = config.half_width;
  initial_ = Region::box(sde::Vector::Constant(1, config.initial_low),
                         sde::Vector::Constant(1, config.initial_high));
  interior_ = Region::box(sde::Vector::Constant(1, -b), sde::Vector::Constant(1, b));
  boundary_ = Region({Box{sde::Vector::Constant(1, -b), sde::Vector::Constant(1, -b)},
                      Box{sde::Vector::Constant(1, b), sde::Vector::Constant(1, b)}});
}

std::vector<FeatureRange> BrownianEnvironment::feature_ranges() const {
  return {{-config_.half_width, config_.half_width}};
}

void BrownianEnvironment::pde_coefficients(const sde::Vector& x, std::size_t action,
                                           bool with_diffusion, sde::Vector& drift,
                                           sde::Matrix& diffusion) const {
  drift = system_.drift(x, action);
  diffusion = with_diffusion ? system_.diffusion(x, action) : sde::Matrix(1, 0);
}

std::unique_ptr<BrownianEnvironment> make_brownian_benchmark(const BrownianConfig& config) {
  return std::make_unique<BrownianEnvironment>(config);
}

}  // namespace pirl
