#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "pirl/environment.hpp"

namespace pirl::vehicle {

struct TireParams {
  double cornering_stiffness = 80000.0;  // N/rad
  double friction = 1.0;                 // mu
};

struct VehicleParams {
  double mass = 1500.0;          // kg
  double lf = 1.2;               // m, CG to front axle
  double lr = 1.4;               // m, CG to rear axle
  double yaw_inertia = 2500.0;   // kg m^2
  TireParams front{80000.0, 1.0};
  TireParams rear{100000.0, 1.0};
  double max_steer = 0.6108652381980153;  // rad (35 deg) at normalized steering 1
  double max_drive_force = 6000.0;        // N at throttle 1
  double drag_coefficient = 25.0;         // N / (m/s)^2 resistance folded into F_xr
  double v_min = 0.5;                     // m/s floor on v_x
  double gravity = 9.81;

  double wheelbase() const { return lf + lr; }
  double front_normal_load() const { return mass * gravity * lr / wheelbase(); }
  double rear_normal_load() const { return mass * gravity * lf / wheelbase(); }
  void validate() const;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline constexpr std::size_t kReferencePoints = 5;
inline constexpr std::size_t kFeatureDim = 5 + 2 * kReferencePoints;

/// Vehicle observation: chassis state, road errors and the lookahead
/// reference points in the vehicle frame.
struct VehicleState {
  double vx = 0.0;    // m/s
  double beta = 0.0;  // rad
  double r = 0.0;     // rad/s
  double e = 0.0;     // m, positive to the left of the centerline
  double psi = 0.0;   // rad, heading relative to the road tangent
  std::array<Point, kReferencePoints> refs{};

  double vy() const;
  /// Layout: [vx, beta, r, e, psi, T1x, T1y, ..., T5x, T5y].
  Eigen::VectorXd to_features() const;
  static VehicleState from_features(const Eigen::VectorXd& f);
};

struct Forces {
  double fxr = 0.0;  // rear longitudinal, N
  double fyf = 0.0;  // front lateral, N
  double fyr = 0.0;  // rear lateral, N
};

struct ChassisRates {
  double dvx = 0.0;
  double dbeta = 0.0;
  double dr = 0.0;
};

struct RoadRates {
  double dpsi = 0.0;
  double de = 0.0;
};

/// The three single-track equations for (v_x, beta, r). Throws
/// SingularityError when vx < params.v_min.
ChassisRates bicycle_derivatives(const VehicleParams& params, const VehicleState& state,
                                 double delta, const Forces& forces);

/// Fiala brush model: -C tan(a) [1 - |C tan a|/(3 mu Fz) + (C tan a)^2/(27 mu^2 Fz^2)]
/// below the sliding angle atan(3 mu Fz / C), -mu Fz sgn(a) beyond it.
double fiala_lateral_force(const TireParams& tire, double slip_angle, double normal_load);
double fiala_saturation_angle(const TireParams& tire, double normal_load);

/// psi' = r - v_x rho, e' = v_y cos(psi) + v_x sin(psi), v_y = v_x tan(beta).
RoadRates road_error_derivatives(const VehicleState& state, double rho);

struct Segment {
  double length = 0.0;     // m
  double curvature = 0.0;  // 1/m, positive turns left
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

/// Centerline made of constant-curvature pieces starting at the origin with
/// heading 0. Queries outside [0, length()] extend the first/last segment.
class RoadGeometry {
 public:
  RoadGeometry() = default;
  RoadGeometry(std::vector<Segment> segments, double half_width);

  static RoadGeometry straight_arc_straight(double entry, double radius, double arc_angle,
                                            double exit, double half_width, bool left = true);

  double length() const { return total_; }
  double half_width() const { return half_width_; }
  const std::vector<Segment>& segments() const { return segments_; }
  double curvature_at(double s) const;
  Pose centerline(double s) const;
  /// Arc-length interval [start, end) of the first curved segment, or {0, 0}.
  std::pair<double, double> first_arc() const;

 private:
  std::size_t segment_index(double s) const;

  std::vector<Segment> segments_;
  std::vector<double> starts_;
  std::vector<Pose> start_poses_;
  double total_ = 0.0;
  double half_width_ = 1.0;
};

/// Reference points at `lookahead` arc lengths ahead of the projection point,
/// expressed in the vehicle frame for a vehicle at (s, e, psi).
std::array<Point, kReferencePoints> reference_points(const RoadGeometry& road, double s, double e,
                                                     double psi,
                                                     const std::array<double, kReferencePoints>& lookahead);

struct ActionGrid {
  std::vector<double> steering{-0.8, -0.4, 0.0, 0.4, 0.8};
  std::vector<double> throttle{0.6, 0.7, 0.8, 0.9, 1.0};

  struct Action {
    double steering = 0.0;
    double throttle = 0.0;
  };

  std::size_t size() const { return steering.size() * throttle.size(); }
  /// Row-major with steering outer: index = i_steer * |throttle| + i_throttle.
  Action decode(std::size_t index) const;
  std::size_t encode(std::size_t steer_index, std::size_t throttle_index) const;
};

/// Physical simulator state: [vx, beta, r, e, psi, s] with s the arc length of
/// the projection onto the centerline.
enum StateIndex : Eigen::Index { kVx = 0, kBeta, kYawRate, kLateral, kHeading, kArc, kStateDim };

struct VehicleEnvConfig {
  std::string kind = "cornering";
  VehicleParams vehicle;
  ActionGrid actions;
  RoadGeometry road;
  std::array<double, kReferencePoints> lookahead{2.0, 4.0, 6.0, 8.0, 10.0};
  /// Additive diffusion on [vx, beta, r, e, psi].
  std::array<double, 5> sigma{0.0, 0.0, 0.0, 0.0, 0.0};
  EnvSettings settings{0.05, 10, 5.0, 0.0};
  /// Boxes over the physical state. For the initial box the heading
  /// coordinate is relative to the velocity direction when
  /// `align_heading_with_velocity` is set (psi = box value - beta).
  Box initial;
  Box interior;
  bool align_heading_with_velocity = false;
  Eigen::VectorXd reference;
};

VehicleEnvConfig cornering_defaults();
VehicleEnvConfig drift_defaults();

class VehicleSystem final : public sde::SdeSystem {
 public:
  VehicleSystem(VehicleParams params, ActionGrid actions, RoadGeometry road,
                std::array<double, 5> sigma);

  std::size_t state_dim() const override { return kStateDim; }
  std::size_t noise_dim() const override { return noise_dim_; }
  std::size_t num_actions() const override { return actions_.size(); }
  sde::Vector drift(const sde::Vector& x, std::size_t action) const override;
  sde::Matrix diffusion(const sde::Vector& x, std::size_t action) const override;
  void project(sde::Vector& x) const override;
  std::string action_label(std::size_t action) const override;

  /// Steering angle (rad) and drive force (N) for an action at speed vx.
  double steering_angle(std::size_t action) const;
  double drive_force(std::size_t action, double vx) const;
  Forces tire_forces(const VehicleState& state, double delta, double fxr) const;

  const VehicleParams& params() const { return params_; }
  const ActionGrid& actions() const { return actions_; }
  const RoadGeometry& road() const { return road_; }
  const std::array<double, 5>& sigma() const { return sigma_; }

 private:
  VehicleParams params_;
  ActionGrid actions_;
  RoadGeometry road_;
  std::array<double, 5> sigma_;
  std::size_t noise_dim_;
};

class LaneSafeSet final : public sde::SafeSet {
 public:
  explicit LaneSafeSet(double e_max) : e_max_(e_max) {}
  double signed_distance(const sde::Vector& x) const override {
    return e_max_ - std::abs(x[kLateral]);
  }
  double e_max() const { return e_max_; }

 private:
  double e_max_;
};

class VehicleEnvironment final : public Environment {
 public:
  explicit VehicleEnvironment(VehicleEnvConfig config);

  std::string kind() const override { return config_.kind; }
  const sde::SdeSystem& system() const override { return system_; }
  const VehicleSystem& vehicle_system() const { return system_; }
  const sde::SafeSet& safe_set() const override { return safe_set_; }
  std::vector<std::string> state_names() const override;
  std::vector<std::string> feature_names() const override;
  sde::Vector features(const sde::Vector& x) const override;
  std::vector<FeatureRange> feature_ranges() const override;
  void pde_coefficients(const sde::Vector& x, std::size_t action, bool with_diffusion,
                        sde::Vector& drift, sde::Matrix& diffusion) const override;
  sde::Vector sample_initial(Rng& rng) const override;
  const Region& initial_region() const override { return initial_; }
  const Region& interior_region() const override { return interior_; }
  const Region& boundary_region() const override { return boundary_; }
  sde::Vector reference_state() const override { return config_.reference; }

  VehicleState observe(const sde::Vector& x) const;
  const VehicleEnvConfig& config() const { return config_; }

 private:
  VehicleEnvConfig config_;
  VehicleSystem system_;
  LaneSafeSet safe_set_;
  Region initial_;
  Region interior_;
  Region boundary_;
};

std::unique_ptr<VehicleEnvironment> make_cornering_env(VehicleEnvConfig config = cornering_defaults());
std::unique_ptr<VehicleEnvironment> make_drift_env(VehicleEnvConfig config = drift_defaults());

}  // namespace pirl::vehicle
