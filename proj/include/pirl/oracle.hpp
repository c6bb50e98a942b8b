#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pirl/environment.hpp"
#include "pirl/qnet.hpp"
#include "pirl/sde.hpp"

namespace pirl::oracle {

using sde::Vector;

struct Axis {
  std::string name = "x";
  double min = -1.0;
  double max = 1.0;
  std::size_t points = 101;

  double step() const { return (max - min) / static_cast<double>(points - 1); }
  double at(std::size_t i) const { return min + static_cast<double>(i) * step(); }
};

/// Gridded Psi(tau, x). Nodes are stored row-major with the first axis
/// outermost; one slice per stored horizon.
class SafetyField {
 public:
  SafetyField() = default;
  SafetyField(std::vector<Axis> axes, std::vector<double> taus);

  const std::vector<Axis>& axes() const { return axes_; }
  std::size_t dim() const { return axes_.size(); }
  std::size_t num_nodes() const;
  const std::vector<double>& taus() const { return taus_; }
  double dtau = 0.0;
  std::string system_id;
  std::string policy_id = "optimal";
  double epsilon = 0.0;

  std::vector<std::size_t> unflatten(std::size_t node) const;
  std::size_t flatten(const std::vector<std::size_t>& idx) const;
  Vector node_point(std::size_t node) const;

  double& value(std::size_t tau_index, std::size_t node);
  double value(std::size_t tau_index, std::size_t node) const;
  std::vector<double>& slice(std::size_t tau_index) { return values_[tau_index]; }
  const std::vector<double>& slice(std::size_t tau_index) const { return values_[tau_index]; }

  /// Index of the stored horizon closest to tau.
  std::size_t nearest_tau(double tau) const;
  /// Multilinear in x (clamped to the grid) and linear in tau between slices.
  double interpolate(double tau, const Vector& x) const;

  std::string to_json() const;
  static SafetyField from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static SafetyField load(const std::filesystem::path& path);

 private:
  double interpolate_slice(std::size_t k, const Vector& x) const;

  std::vector<Axis> axes_;
  std::vector<double> taus_;
  std::vector<std::vector<double>> values_;
};

struct FdOptions {
  std::vector<Axis> axes;
  double tau_max = 1.0;
  /// Pseudo-time step; 0 picks the largest stable step times cfl_safety.
  double dtau = 0.0;
  double cfl_safety = 0.9;
  /// Mollifier width for Psi(0, .) = l_eps; negative means two grid cells.
  double epsilon = -1.0;
  /// Horizons to store (rounded to the time grid); empty stores {0, tau_max}.
  std::vector<double> snapshots;
  /// Evaluate a fixed action instead of maximizing over the action set.
  std::optional<std::size_t> fixed_action;
  std::string system_id = "system";
};

/// Explicit monotone scheme for Psi_tau = max_a [f . grad Psi + 1/2 tr(a Psi_xx)]
/// with Psi(0, x) = l_eps(x) and Psi = 0 wherever signed_distance <= 0. Upwind
/// convection, central diffusion (diagonal sigma sigma^T only). Throws CflError
/// with a suggested step when `dtau` is too large, ConfigError for more than two
/// dimensions or a grid that does not cover the safe set.
SafetyField solve_hjb_fd(const sde::SdeSystem& system, const sde::SafeSet& safe_set,
                         const FdOptions& options);

/// Largest stable pseudo-time step of the explicit scheme on this grid.
double max_stable_dtau(const sde::SdeSystem& system, const sde::SafeSet& safe_set,
                       const std::vector<Axis>& axes, std::optional<std::size_t> fixed_action);

/// Survival probability of x + sigma W_t in (-b, b) up to time tau, from the
/// eigenfunction expansion of the heat equation with absorbing ends.
double dirichlet_survival_series(double x, double tau, double half_width, double sigma,
                                 double tolerance = 1e-15);

// Monte-Carlo policy evaluation ----------------------------------------------------

/// Greedy policy of a network: argmax_a Q([h, features(x)], a).
sde::Policy greedy_policy(const qnet::QNetwork& net, const Environment& env);
/// Policy that ignores the state.
sde::Policy constant_policy(std::size_t action);

struct McRequest {
  long n_rollouts = 1000;
  unsigned threads = 1;
  /// Use the same noise streams for every listed state.
  bool common_random_numbers = true;
};

/// Per-state safety probability with 95% CI.
std::vector<sde::McEstimate> evaluate_policy_mc(const Environment& env, const sde::Policy& policy,
                                                const std::vector<sde::AugmentedState>& states,
                                                const McRequest& request, const Rng& rng);

struct PairedEstimate {
  sde::McEstimate a;
  sde::McEstimate b;
  double diff = 0.0;  // a - b
  double diff_half_width_95 = 0.0;
};

/// Paired comparison of two policies: rollout j of both policies starts from
/// the same initial state and sees the same noise.
PairedEstimate paired_safety(const Environment& env, const sde::Policy& a, const sde::Policy& b,
                             const std::function<sde::AugmentedState(Rng&)>& initial, long n,
                             const Rng& rng, unsigned threads = 1);

// Comparison of learned values against a field ----------------------------------------

using ValueFn = std::function<double(double tau, const Vector& x)>;

/// max_a Q([tau, features(x)], a).
ValueFn value_function(const qnet::QNetwork& net, const Environment& env);

struct CompareReport {
  double mae = 0.0;
  double max_abs = 0.0;
  std::size_t count = 0;
  /// Split by distance to the unsafe set: nodes within `band` of it and the rest.
  double mae_interior = 0.0;
  std::size_t count_interior = 0;
  double mae_band = 0.0;
  std::size_t count_band = 0;
};

/// Errors at explicit probe points (field interpolated there).
CompareReport compare_at(const ValueFn& value, const SafetyField& field, const sde::SafeSet& safe_set,
                         const std::vector<sde::AugmentedState>& probes, double band = 0.1);

/// Errors over every grid node strictly inside the safe set at the stored
/// horizon nearest to tau.
CompareReport compare_field(const ValueFn& value, const SafetyField& field,
                            const sde::SafeSet& safe_set, double tau, double band = 0.1);

/// Throws DimensionMismatch when the field's grid does not match the
/// environment's physical state.
void check_field_matches(const SafetyField& field, const Environment& env);

/// CSV matrix: header "<y>\<x>,x_0,...", then one row per y value.
void write_heatmap_csv(const std::filesystem::path& path, const std::string& x_name,
                       const std::vector<double>& xs, const std::string& y_name,
                       const std::vector<double>& ys,
                       const std::vector<std::vector<double>>& values);

}  // namespace pirl::oracle
