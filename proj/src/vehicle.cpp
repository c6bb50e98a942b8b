#include "pirl/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "pirl/errors.hpp"

namespace pirl::vehicle {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kMaxSideslip = 1.4;

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) {
    out[i++] = x;
  }
  return out;
}

}  // namespace

void VehicleParams::validate() const {
  const bool positive = mass > 0 && lf > 0 && lr > 0 && yaw_inertia > 0 &&
                        front.cornering_stiffness > 0 && front.friction > 0 &&
                        rear.cornering_stiffness > 0 && rear.friction > 0 && max_steer > 0 &&
                        max_drive_force > 0 && drag_coefficient >= 0 && v_min > 0 && gravity > 0;
  if (!positive) {
    throw ConfigError("vehicle: parameters must be positive");
  }
}

double VehicleState::vy() const {
  return vx * std::tan(beta);
}

Eigen::VectorXd VehicleState::to_features() const {
  Eigen::VectorXd f(static_cast<Eigen::Index>(kFeatureDim));
  f << vx, beta, r, e, psi, refs[0].x, refs[0].y, refs[1].x, refs[1].y, refs[2].x, refs[2].y,
      refs[3].x, refs[3].y, refs[4].x, refs[4].y;
  return f;
}

VehicleState VehicleState::from_features(const Eigen::VectorXd& f) {
  if (f.size() != static_cast<Eigen::Index>(kFeatureDim)) {
    throw DimensionMismatch("vehicle: feature vector must have 15 entries");
  }
  VehicleState s;
  s.vx = f[0];
  s.beta = f[1];
  s.r = f[2];
  s.e = f[3];
  s.psi = f[4];
  for (std::size_t i = 0; i < kReferencePoints; ++i) {
    s.refs[i] = {f[static_cast<Eigen::Index>(5 + 2 * i)], f[static_cast<Eigen::Index>(6 + 2 * i)]};
  }
  return s;
}

ChassisRates bicycle_derivatives(const VehicleParams& p, const VehicleState& s, double delta,
                                 const Forces& f) {
  if (s.vx < p.v_min) {
    std::ostringstream msg;
    msg << "bicycle model singular: v_x = " << s.vx << " < v_min = " << p.v_min;
    throw SingularityError(msg.str());
  }
  ChassisRates d;
  d.dvx = (f.fxr - f.fyf * std::sin(delta)) / p.mass + s.r * s.vx * s.beta;
  d.dbeta = (f.fyr + f.fyf * std::cos(delta)) / (p.mass * s.vx) - s.r;
  d.dr = (p.lf * f.fyf * std::cos(delta) - p.lr * f.fyr) / p.yaw_inertia;
  return d;
}

double fiala_saturation_angle(const TireParams& tire, double normal_load) {
  return std::atan(3.0 * tire.friction * normal_load / tire.cornering_stiffness);
}

double fiala_lateral_force(const TireParams& tire, double slip_angle, double normal_load) {
  if (!(normal_load > 0.0)) {
    throw ContractViolation("fiala: normal load must be positive");
  }
  const double limit = tire.friction * normal_load;
  if (std::abs(slip_angle) >= fiala_saturation_angle(tire, normal_load)) {
    return slip_angle > 0.0 ? -limit : limit;
  }
  const double c = tire.cornering_stiffness * std::tan(slip_angle);
  return -c * (1.0 - std::abs(c) / (3.0 * limit) + c * c / (27.0 * limit * limit));
}

RoadRates road_error_derivatives(const VehicleState& s, double rho) {
  RoadRates d;
  d.dpsi = s.r - s.vx * rho;
  d.de = s.vy() * std::cos(s.psi) + s.vx * std::sin(s.psi);
  return d;
}

// ---------------------------------------------------------------------------

RoadGeometry::RoadGeometry(std::vector<Segment> segments, double half_width)
    : segments_(std::move(segments)), half_width_(half_width) {
  if (segments_.empty()) {
    throw ConfigError("road: at least one segment is required");
  }
  if (!(half_width_ > 0.0)) {
    throw ConfigError("road: half width must be positive");
  }
  Pose pose;
  double s = 0.0;
  for (const Segment& seg : segments_) {
    if (!(seg.length > 0.0)) {
      throw ConfigError("road: segment lengths must be positive");
    }
    starts_.push_back(s);
    start_poses_.push_back(pose);
    const double k = seg.curvature;
    const double th = pose.heading + k * seg.length;
    if (std::abs(k) < 1e-12) {
      pose.x += seg.length * std::cos(pose.heading);
      pose.y += seg.length * std::sin(pose.heading);
    } else {
      pose.x += (std::sin(th) - std::sin(pose.heading)) / k;
      pose.y -= (std::cos(th) - std::cos(pose.heading)) / k;
    }
    pose.heading = th;
    s += seg.length;
  }
  total_ = s;
}

RoadGeometry RoadGeometry::straight_arc_straight(double entry, double radius, double arc_angle,
                                                 double exit, double half_width, bool left) {
  if (!(radius > 0.0) || !(arc_angle > 0.0)) {
    throw ConfigError("road: corner radius and angle must be positive");
  }
  const double k = (left ? 1.0 : -1.0) / radius;
  return RoadGeometry({{entry, 0.0}, {radius * arc_angle, k}, {exit, 0.0}}, half_width);
}

std::size_t RoadGeometry::segment_index(double s) const {
  const auto it = std::upper_bound(starts_.begin(), starts_.end(), s);
  if (it == starts_.begin()) {
    return 0;
  }
  return static_cast<std::size_t>(std::distance(starts_.begin(), it) - 1);
}

double RoadGeometry::curvature_at(double s) const {
  if (segments_.empty()) {
    return 0.0;
  }
  return segments_[segment_index(s)].curvature;
}

Pose RoadGeometry::centerline(double s) const {
  const std::size_t i = segment_index(s);
  const Pose& p0 = start_poses_[i];
  const double k = segments_[i].curvature;
  const double ds = s - starts_[i];
  Pose p;
  p.heading = p0.heading + k * ds;
  if (std::abs(k) < 1e-12) {
    p.x = p0.x + ds * std::cos(p0.heading);
    p.y = p0.y + ds * std::sin(p0.heading);
  } else {
    p.x = p0.x + (std::sin(p.heading) - std::sin(p0.heading)) / k;
    p.y = p0.y - (std::cos(p.heading) - std::cos(p0.heading)) / k;
  }
  return p;
}

std::pair<double, double> RoadGeometry::first_arc() const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].curvature != 0.0) {
      return {starts_[i], starts_[i] + segments_[i].length};
    }
  }
  return {0.0, 0.0};
}

std::array<Point, kReferencePoints> reference_points(
    const RoadGeometry& road, double s, double e, double psi,
    const std::array<double, kReferencePoints>& lookahead) {
  const Pose c = road.centerline(s);
  const double px = c.x - e * std::sin(c.heading);
  const double py = c.y + e * std::cos(c.heading);
  const double phi = c.heading + psi;
  const double cp = std::cos(phi);
  const double sp = std::sin(phi);
  std::array<Point, kReferencePoints> out{};
  for (std::size_t i = 0; i < kReferencePoints; ++i) {
    const Pose q = road.centerline(s + lookahead[i]);
    const double dx = q.x - px;
    const double dy = q.y - py;
    out[i] = {cp * dx + sp * dy, -sp * dx + cp * dy};
  }
  return out;
}

ActionGrid::Action ActionGrid::decode(std::size_t index) const {
  if (index >= size()) {
    throw ContractViolation("action grid: index out of range");
  }
  return {steering[index / throttle.size()], throttle[index % throttle.size()]};
}

std::size_t ActionGrid::encode(std::size_t steer_index, std::size_t throttle_index) const {
  if (steer_index >= steering.size() || throttle_index >= throttle.size()) {
    throw ContractViolation("action grid: level index out of range");
  }
  return steer_index * throttle.size() + throttle_index;
}

// ---------------------------------------------------------------------------

VehicleSystem::VehicleSystem(VehicleParams params, ActionGrid actions, RoadGeometry road,
                             std::array<double, 5> sigma)
    : params_(params), actions_(std::move(actions)), road_(std::move(road)), sigma_(sigma) {
  params_.validate();
  if (actions_.size() == 0) {
    throw ConfigError("vehicle: action grid is empty");
  }
  for (double v : sigma_) {
    if (!(v >= 0.0)) {
      throw ConfigError("vehicle: diffusion coefficients must be non-negative");
    }
  }
  const bool any = std::any_of(sigma_.begin(), sigma_.end(), [](double v) { return v > 0.0; });
  noise_dim_ = any ? sigma_.size() : 0;
}

double VehicleSystem::steering_angle(std::size_t action) const {
  return actions_.decode(action).steering * params_.max_steer;
}

double VehicleSystem::drive_force(std::size_t action, double vx) const {
  return actions_.decode(action).throttle * params_.max_drive_force -
         params_.drag_coefficient * vx * vx;
}

Forces VehicleSystem::tire_forces(const VehicleState& s, double delta, double fxr) const {
  const double tb = std::tan(s.beta);
  const double alpha_f = std::atan(tb + params_.lf * s.r / s.vx) - delta;
  const double alpha_r = std::atan(tb - params_.lr * s.r / s.vx);
  Forces f;
  f.fxr = fxr;
  f.fyf = fiala_lateral_force(params_.front, alpha_f, params_.front_normal_load());
  f.fyr = fiala_lateral_force(params_.rear, alpha_r, params_.rear_normal_load());
  return f;
}

sde::Vector VehicleSystem::drift(const sde::Vector& x, std::size_t action) const {
  VehicleState s;
  s.vx = x[kVx];
  s.beta = x[kBeta];
  s.r = x[kYawRate];
  s.e = x[kLateral];
  s.psi = x[kHeading];
  const double delta = steering_angle(action);
  const Forces f = tire_forces(s, delta, drive_force(action, s.vx));
  const ChassisRates c = bicycle_derivatives(params_, s, delta, f);
  const RoadRates rr = road_error_derivatives(s, road_.curvature_at(x[kArc]));
  sde::Vector d(kStateDim);
  d << c.dvx, c.dbeta, c.dr, rr.de, rr.dpsi, s.vx;
  return d;
}

sde::Matrix VehicleSystem::diffusion(const sde::Vector& /*x*/, std::size_t /*action*/) const {
  sde::Matrix m = sde::Matrix::Zero(kStateDim, static_cast<Eigen::Index>(noise_dim_));
  for (std::size_t i = 0; i < noise_dim_; ++i) {
    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = sigma_[i];
  }
  return m;
}

void VehicleSystem::project(sde::Vector& x) const {
  x[kVx] = std::max(x[kVx], params_.v_min);
  x[kBeta] = std::clamp(x[kBeta], -kMaxSideslip, kMaxSideslip);
  x[kHeading] = wrap_angle(x[kHeading]);
}

std::string VehicleSystem::action_label(std::size_t action) const {
  const auto a = actions_.decode(action);
  std::ostringstream out;
  out << "steer=" << a.steering << " throttle=" << a.throttle;
  return out.str();
}

// ---------------------------------------------------------------------------

VehicleEnvironment::VehicleEnvironment(VehicleEnvConfig config)
    : Environment(config.settings),
      config_(std::move(config)),
      system_(config_.vehicle, config_.actions, config_.road, config_.sigma),
      safe_set_(config_.road.half_width()) {
  if (config_.initial.lo.size() != kStateDim || config_.interior.lo.size() != kStateDim ||
      config_.reference.size() != kStateDim) {
    throw ConfigError("vehicle env: regions and reference state must have 6 coordinates");
  }
  initial_ = Region({config_.initial});
  interior_ = Region({config_.interior});
  Box left = config_.interior;
  Box right = config_.interior;
  const double e_max = config_.road.half_width();
  left.lo[kLateral] = left.hi[kLateral] = e_max;
  right.lo[kLateral] = right.hi[kLateral] = -e_max;
  boundary_ = Region({left, right});
}

std::vector<std::string> VehicleEnvironment::state_names() const {
  return {"v_x", "beta", "r", "e", "psi", "s"};
}

std::vector<std::string> VehicleEnvironment::feature_names() const {
  std::vector<std::string> names{"v_x", "beta", "r", "e", "psi"};
  for (std::size_t i = 1; i <= kReferencePoints; ++i) {
    names.push_back("T" + std::to_string(i) + "_x");
    names.push_back("T" + std::to_string(i) + "_y");
  }
  return names;
}

VehicleState VehicleEnvironment::observe(const sde::Vector& x) const {
  VehicleState s;
  s.vx = x[kVx];
  s.beta = x[kBeta];
  s.r = x[kYawRate];
  s.e = x[kLateral];
  s.psi = x[kHeading];
  s.refs = reference_points(config_.road, x[kArc], s.e, s.psi, config_.lookahead);
  return s;
}

sde::Vector VehicleEnvironment::features(const sde::Vector& x) const {
  return observe(x).to_features();
}

std::vector<FeatureRange> VehicleEnvironment::feature_ranges() const {
  const Box& b = config_.interior;
  std::vector<FeatureRange> out;
  for (Eigen::Index i = 0; i < kArc; ++i) {
    out.push_back({b.lo[i], b.hi[i]});
  }
  const double reach = config_.lookahead.back();
  for (std::size_t i = 0; i < kReferencePoints; ++i) {
    out.push_back({-reach, reach});
    out.push_back({-reach, reach});
  }
  return out;
}

void VehicleEnvironment::pde_coefficients(const sde::Vector& x, std::size_t action,
                                          bool with_diffusion, sde::Vector& drift,
                                          sde::Matrix& diffusion) const {
  const sde::Vector d = system_.drift(x, action);
  drift = sde::Vector::Zero(static_cast<Eigen::Index>(kFeatureDim));
  // Reference-point convection is left out of the PDE operator.
  drift.head(5) = d.head(5);
  const auto w = static_cast<Eigen::Index>(with_diffusion ? system_.noise_dim() : 0);
  diffusion = sde::Matrix::Zero(static_cast<Eigen::Index>(kFeatureDim), w);
  for (Eigen::Index i = 0; i < w; ++i) {
    diffusion(i, i) = system_.sigma()[static_cast<std::size_t>(i)];
  }
}

sde::Vector VehicleEnvironment::sample_initial(Rng& rng) const {
  sde::Vector x = initial_.sample(rng);
  if (config_.align_heading_with_velocity) {
    x[kHeading] -= x[kBeta];
  }
  return x;
}

// ---------------------------------------------------------------------------

VehicleEnvConfig cornering_defaults() {
  VehicleEnvConfig c;
  c.kind = "cornering";
  const double entry = 40.0;
  const double radius = 20.0;
  const double angle = std::numbers::pi / 2.0;
  const double arc_end = entry + radius * angle;
  c.road = RoadGeometry::straight_arc_straight(entry, radius, angle, 150.0, 1.0);
  c.sigma = {0.1, 0.01, 0.05, 0.05, 0.01};
  c.settings = EnvSettings{0.05, 10, 5.0, 0.0};
  c.initial = Box{vec({5.0, 0.0, 0.0, -0.3, -0.05, 0.0}), vec({15.0, 0.0, 0.0, 0.3, 0.05, arc_end})};
  c.interior = Box{vec({3.0, -0.2, -1.2, -1.0, -0.6, 0.0}),
                   vec({18.0, 0.2, 1.2, 1.0, 0.6, arc_end + 40.0})};
  c.reference = vec({10.0, 0.0, 0.0, 0.0, 0.0, 10.0});
  return c;
}

VehicleEnvConfig drift_defaults() {
  VehicleEnvConfig c;
  c.kind = "drift";
  c.vehicle.front = {80000.0, 1.2};
  c.vehicle.rear = {100000.0, 1.2};
  c.vehicle.max_drive_force = 9000.0;
  c.vehicle.drag_coefficient = 18.0;
  const double entry = 20.0;
  const double radius = 40.0;
  const double angle = 2.0 * std::numbers::pi / 3.0;
  c.road = RoadGeometry::straight_arc_straight(entry, radius, angle, 300.0, 8.0);
  c.sigma = {0.1, 0.01, 0.05, 0.05, 0.01};
  c.settings = EnvSettings{0.05, 10, 5.0, 0.0};
  c.initial = Box{vec({30.0, -25.0 * kDeg, 50.0 * kDeg, -1.0, -0.05, entry}),
                  vec({30.0, -20.0 * kDeg, 70.0 * kDeg, 1.0, 0.05, entry + 2.0})};
  c.align_heading_with_velocity = true;
  c.interior = Box{vec({8.0, -0.7, -0.5, -8.0, -0.4, 0.0}),
                   vec({32.0, 0.3, 1.5, 8.0, 0.9, entry + radius * angle + 40.0})};
  c.reference = vec({30.0, -22.5 * kDeg, 60.0 * kDeg, 0.0, 22.5 * kDeg, entry});
  return c;
}

std::unique_ptr<VehicleEnvironment> make_cornering_env(VehicleEnvConfig config) {
  return std::make_unique<VehicleEnvironment>(std::move(config));
}

std::unique_ptr<VehicleEnvironment> make_drift_env(VehicleEnvConfig config) {
  return std::make_unique<VehicleEnvironment>(std::move(config));
}

}  // namespace pirl::vehicle
