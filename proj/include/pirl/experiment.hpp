#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pirl/config.hpp"
#include "pirl/environment.hpp"
#include "pirl/qnet.hpp"
#include "pirl/sde.hpp"

namespace pirl::experiment {

/// Closed-loop rollout recorded step by step. Row k holds the state at
/// t_k = k dt, the action applied there and the reward of that step; the last
/// row is the final state with no action.
struct Trajectory {
  std::vector<double> t;
  std::vector<sde::Vector> x;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  /// Every recorded state stayed inside the safe set.
  bool safe = true;
};

/// Same stepping and noise consumption as sde::safety_rollout, so rollout j
/// of an evaluation reproduces outcome j of the Monte-Carlo estimate.
Trajectory record_rollout(const Environment& env, const sde::Policy& policy,
                          const sde::AugmentedState& s0, Rng& rng);

/// Vehicle: t,v_x,beta,r,e,psi,delta,d,reward (angles in rad, delta the road
/// wheel angle, d the throttle). Brownian: t,x,u,reward.
std::vector<std::string> trajectory_columns(const Environment& env);
void write_trajectory_csv(const std::filesystem::path& path, const Environment& env,
                          const Trajectory& traj);

/// Shortest round-trip decimal form used in every CSV.
std::string format_number(double v);

/// Network for the environment: weights from `checkpoint` if given, otherwise
/// the untrained Glorot initialization for the config seed. Throws
/// DimensionMismatch when the checkpoint does not fit the environment.
qnet::QNetwork load_network(const config::Json& cfg, const Environment& env,
                            const std::optional<std::filesystem::path>& checkpoint);

struct MapSpec {
  std::string x = "e";
  double x_min = -1.0;
  double x_max = 1.0;
  long x_points = 41;
  std::string y = "psi";
  double y_min = -0.5;
  double y_max = 0.5;
  long y_points = 41;
  double tau = -1.0;
  /// Coordinates pinned away from the reference state (state names or "tau").
  std::vector<std::pair<std::string, double>> fixed;

  static MapSpec from_config(const config::Json& cfg);
};

struct SafetyMap {
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<std::vector<double>> values;  // values[j][i] at (xs[i], ys[j])
};

/// max_a Q over a 2D slice of (tau, physical state). Unspecified coordinates
/// come from the environment's reference state and tau from spec.tau (tau_max
/// when negative). Unknown coordinate names throw ConfigError.
SafetyMap safety_map(const qnet::QNetwork& net, const Environment& env, const MapSpec& spec);

// Subcommands. Each returns a process exit code: 0 success, 2 config error,
// 3 numeric abort, 4 I/O error. Messages go to `err`.

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed;
};
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<long> n_rollouts;
  std::optional<std::string> initial;
  std::optional<std::filesystem::path> output_dir;
};
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct OracleArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> output;
};
int cmd_oracle(const OracleArgs& args, std::ostream& out, std::ostream& err);

struct ExportMapArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::string> x;
  std::optional<std::string> y;
  std::optional<double> tau;
  std::vector<std::string> fixed;  // "name=value"
  std::optional<std::filesystem::path> output;
};
int cmd_export_map(const ExportMapArgs& args, std::ostream& out, std::ostream& err);

struct RolloutArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> checkpoint;
  /// Comma-separated physical state; sampled from the initial region when absent.
  std::optional<std::string> state;
  std::optional<double> horizon;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output;
};
int cmd_rollout(const RolloutArgs& args, std::ostream& out, std::ostream& err);

}  // namespace pirl::experiment
