#include "pirl/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "pirl/errors.hpp"

namespace pirl::oracle {

SafetyField::SafetyField(std::vector<Axis> axes, std::vector<double> taus)
    : axes_(std::move(axes)), taus_(std::move(taus)) {
  for (const Axis& a : axes_) {
    if (a.points < 3 || !(a.max > a.min)) {
      throw ConfigError("grid: each axis needs max > min and at least 3 points");
    }
  }
  values_.assign(taus_.size(), std::vector<double>(num_nodes(), 0.0));
}

std::size_t SafetyField::num_nodes() const {
  std::size_t n = axes_.empty() ? 0 : 1;
  for (const Axis& a : axes_) {
    n *= a.points;
  }
  return n;
}

std::vector<std::size_t> SafetyField::unflatten(std::size_t node) const {
  std::vector<std::size_t> idx(axes_.size());
  for (std::size_t d = axes_.size(); d-- > 0;) {
    idx[d] = node % axes_[d].points;
    node /= axes_[d].points;
  }
  return idx;
}

std::size_t SafetyField::flatten(const std::vector<std::size_t>& idx) const {
  std::size_t node = 0;
  for (std::size_t d = 0; d < axes_.size(); ++d) {
    node = node * axes_[d].points + idx[d];
  }
  return node;
}

Vector SafetyField::node_point(std::size_t node) const {
  const auto idx = unflatten(node);
  Vector x(static_cast<Eigen::Index>(axes_.size()));
  for (std::size_t d = 0; d < axes_.size(); ++d) {
    x[static_cast<Eigen::Index>(d)] = axes_[d].at(idx[d]);
  }
  return x;
}

double& SafetyField::value(std::size_t k, std::size_t node) {
  return values_.at(k).at(node);
}

double SafetyField::value(std::size_t k, std::size_t node) const {
  return values_.at(k).at(node);
}

std::size_t SafetyField::nearest_tau(double tau) const {
  if (taus_.empty()) {
    throw ContractViolation("safety field has no stored horizons");
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < taus_.size(); ++k) {
    if (std::abs(taus_[k] - tau) < std::abs(taus_[best] - tau)) {
      best = k;
    }
  }
  return best;
}

double SafetyField::interpolate_slice(std::size_t k, const Vector& x) const {
  const std::size_t d = axes_.size();
  std::vector<std::size_t> lo(d);
  std::vector<double> frac(d);
  for (std::size_t i = 0; i < d; ++i) {
    const Axis& a = axes_[i];
    const double u = std::clamp((x[static_cast<Eigen::Index>(i)] - a.min) / a.step(), 0.0,
                                static_cast<double>(a.points - 1));
    lo[i] = std::min(static_cast<std::size_t>(u), a.points - 2);
    frac[i] = u - static_cast<double>(lo[i]);
  }
  double out = 0.0;
  std::vector<std::size_t> idx(d);
  for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
    double w = 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      const bool up = (corner >> i) & 1U;
      idx[i] = lo[i] + (up ? 1 : 0);
      w *= up ? frac[i] : 1.0 - frac[i];
    }
    if (w != 0.0) {
      out += w * values_[k][flatten(idx)];
    }
  }
  return out;
}

double SafetyField::interpolate(double tau, const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != axes_.size()) {
    throw DimensionMismatch("safety field: point dimension does not match the grid");
  }
  if (taus_.empty()) {
    throw ContractViolation("safety field has no stored horizons");
  }
  if (tau <= taus_.front()) {
    return interpolate_slice(0, x);
  }
  for (std::size_t k = 1; k < taus_.size(); ++k) {
    if (tau <= taus_[k]) {
      const double w = (tau - taus_[k - 1]) / (taus_[k] - taus_[k - 1]);
      return (1.0 - w) * interpolate_slice(k - 1, x) + w * interpolate_slice(k, x);
    }
  }
  return interpolate_slice(taus_.size() - 1, x);
}

std::string SafetyField::to_json() const {
  nlohmann::json axes = nlohmann::json::array();
  for (const Axis& a : axes_) {
    axes.push_back({{"name", a.name}, {"min", a.min}, {"max", a.max}, {"points", a.points}});
  }
  nlohmann::json j = {{"format", "pirl-safety-field"},
                      {"version", 1},
                      {"system", system_id},
                      {"policy", policy_id},
                      {"epsilon", epsilon},
                      {"dtau", dtau},
                      {"layout", "row-major, first axis outermost, one row per tau"},
                      {"axes", axes},
                      {"taus", taus_},
                      {"values", values_}};
  return j.dump() + "\n";
}

SafetyField SafetyField::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "pirl-safety-field") {
      throw IoError("safety field: unexpected format tag");
    }
    if (j.at("version") != 1) {
      throw IoError("safety field: unsupported version");
    }
    std::vector<Axis> axes;
    for (const auto& a : j.at("axes")) {
      axes.push_back({a.at("name").get<std::string>(), a.at("min").get<double>(),
                      a.at("max").get<double>(), a.at("points").get<std::size_t>()});
    }
    SafetyField f(std::move(axes), j.at("taus").get<std::vector<double>>());
    f.values_ = j.at("values").get<std::vector<std::vector<double>>>();
    if (f.values_.size() != f.taus_.size()) {
      throw IoError("safety field: value rows do not match taus");
    }
    for (const auto& row : f.values_) {
      if (row.size() != f.num_nodes()) {
        throw IoError("safety field: value row has the wrong length");
      }
    }
    f.system_id = j.value("system", "");
    f.policy_id = j.value("policy", "");
    f.epsilon = j.value("epsilon", 0.0);
    f.dtau = j.value("dtau", 0.0);
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("safety field: malformed JSON: ") + e.what());
  }
}

void SafetyField::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << to_json();
}

SafetyField SafetyField::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

// ---------------------------------------------------------------------------

namespace {

// Neighbour weights of one node under one action, per unit pseudo-time.
struct Stencil {
  std::array<double, 2> up{};
  std::array<double, 2> down{};
  double total = 0.0;
};

struct Discretization {
  SafetyField shape;
  std::vector<char> inside;
  std::vector<double> distance;
  std::vector<std::size_t> actions;
  std::vector<Stencil> stencils;  // node-major, then action
  std::array<std::size_t, 2> stride{};
  double rate = 0.0;              // max total weight
};

Discretization discretize(const sde::SdeSystem& system, const sde::SafeSet& safe_set,
                          const std::vector<Axis>& axes, std::optional<std::size_t> fixed_action) {
  const std::size_t d = axes.size();
  if (system.state_dim() > 2 || d == 0 || d > 2) {
    throw ConfigError("FD oracle: only 1- or 2-dimensional systems are supported (got " +
                      std::to_string(system.state_dim()) + " state dimensions)");
  }
  if (system.state_dim() != d) {
    throw DimensionMismatch("FD oracle: grid has " + std::to_string(d) + " axes but the system has " +
                            std::to_string(system.state_dim()) + " states");
  }
  Discretization disc{SafetyField(axes, {}), {}, {}, {}, {}, {}, 0.0};
  if (fixed_action) {
    if (*fixed_action >= system.num_actions()) {
      throw ConfigError("FD oracle: fixed action out of range");
    }
    disc.actions = {*fixed_action};
  } else {
    for (std::size_t a = 0; a < system.num_actions(); ++a) {
      disc.actions.push_back(a);
    }
  }
  disc.stride[d - 1] = 1;
  if (d == 2) {
    disc.stride[0] = axes[1].points;
  }
  const std::size_t n = disc.shape.num_nodes();
  const std::size_t na = disc.actions.size();
  disc.inside.resize(n);
  disc.distance.resize(n);
  disc.stencils.resize(n * na);
  for (std::size_t node = 0; node < n; ++node) {
    const Vector x = disc.shape.node_point(node);
    disc.distance[node] = safe_set.signed_distance(x);
    disc.inside[node] = disc.distance[node] > 0.0;
    if (!disc.inside[node]) {
      continue;
    }
    const auto idx = disc.shape.unflatten(node);
    for (std::size_t i = 0; i < d; ++i) {
      if (idx[i] == 0 || idx[i] + 1 == axes[i].points) {
        throw ConfigError("FD oracle: the grid must cover the safe set (axis '" + axes[i].name +
                          "' ends inside it)");
      }
    }
    for (std::size_t k = 0; k < na; ++k) {
      const Vector f = system.drift(x, disc.actions[k]);
      const sde::Matrix s = system.diffusion(x, disc.actions[k]);
      const sde::Matrix a = s * s.transpose();
      if (d == 2 && s.cols() > 0 && std::abs(a(0, 1)) > 1e-14) {
        throw ConfigError("FD oracle: correlated diffusion is not supported");
      }
      Stencil& st = disc.stencils[node * na + k];
      for (std::size_t i = 0; i < d; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double h = axes[i].step();
        const double diff = s.cols() > 0 ? 0.5 * a(ii, ii) / (h * h) : 0.0;
        st.up[i] = std::max(f[ii], 0.0) / h + diff;
        st.down[i] = std::max(-f[ii], 0.0) / h + diff;
        st.total += st.up[i] + st.down[i];
      }
      disc.rate = std::max(disc.rate, st.total);
    }
  }
  return disc;
}

}  // namespace

double max_stable_dtau(const sde::SdeSystem& system, const sde::SafeSet& safe_set,
                       const std::vector<Axis>& axes, std::optional<std::size_t> fixed_action) {
  const Discretization disc = discretize(system, safe_set, axes, fixed_action);
  return disc.rate > 0.0 ? 1.0 / disc.rate : INFINITY;
}

SafetyField solve_hjb_fd(const sde::SdeSystem& system, const sde::SafeSet& safe_set,
                         const FdOptions& options) {
  if (!(options.tau_max >= 0.0)) {
    throw ConfigError("FD oracle: tau_max must be non-negative");
  }
  if (!(options.cfl_safety > 0.0 && options.cfl_safety <= 1.0)) {
    throw ConfigError("FD oracle: cfl_safety must lie in (0, 1]");
  }
  const Discretization disc = discretize(system, safe_set, options.axes, options.fixed_action);
  const double limit = disc.rate > 0.0 ? 1.0 / disc.rate : INFINITY;

  double dtau = options.dtau;
  long steps = 0;
  if (options.tau_max > 0.0) {
    if (dtau <= 0.0) {
      const double target = std::min(options.cfl_safety * limit, options.tau_max);
      steps = static_cast<long>(std::ceil(options.tau_max / target - 1e-9));
      dtau = options.tau_max / static_cast<double>(steps);
    } else {
      if (dtau > limit * (1.0 + 1e-12)) {
        std::ostringstream msg;
        msg << "FD oracle: dtau = " << dtau << " violates the stability bound " << limit
            << "; try dtau <= " << options.cfl_safety * limit;
        throw CflError(msg.str(), options.cfl_safety * limit);
      }
      steps = std::lround(options.tau_max / dtau);
      if (std::abs(static_cast<double>(steps) * dtau - options.tau_max) > 1e-9 * options.tau_max) {
        throw ConfigError("FD oracle: tau_max must be a multiple of dtau");
      }
    }
  }

  std::vector<double> wanted = options.snapshots;
  if (wanted.empty()) {
    wanted = {0.0, options.tau_max};
  }
  std::vector<long> snap_steps;
  for (double t : wanted) {
    if (t < 0.0 || t > options.tau_max + 1e-12) {
      throw ConfigError("FD oracle: snapshot horizons must lie in [0, tau_max]");
    }
    snap_steps.push_back(dtau > 0.0 ? std::lround(t / dtau) : 0);
  }
  std::sort(snap_steps.begin(), snap_steps.end());
  snap_steps.erase(std::unique(snap_steps.begin(), snap_steps.end()), snap_steps.end());
  std::vector<double> taus;
  for (long k : snap_steps) {
    taus.push_back(static_cast<double>(k) * dtau);
  }

  SafetyField field(options.axes, taus);
  field.dtau = dtau;
  field.system_id = options.system_id;
  field.policy_id = options.fixed_action ? "action:" + std::to_string(*options.fixed_action) : "optimal";
  double min_step = INFINITY;
  for (const Axis& a : options.axes) {
    min_step = std::min(min_step, a.step());
  }
  field.epsilon = options.epsilon < 0.0 ? 2.0 * min_step : options.epsilon;

  const std::size_t n = field.num_nodes();
  const std::size_t na = disc.actions.size();
  const std::size_t d = options.axes.size();
  std::vector<double> psi(n, 0.0);
  for (std::size_t node = 0; node < n; ++node) {
    if (disc.inside[node]) {
      psi[node] = sde::mollifier_from_distance(disc.distance[node], field.epsilon);
    }
  }
  std::vector<double> next(n, 0.0);
  std::size_t snap = 0;
  for (long step = 0;; ++step) {
    while (snap < snap_steps.size() && snap_steps[snap] == step) {
      field.slice(snap) = psi;
      ++snap;
    }
    if (step == steps) {
      break;
    }
    for (std::size_t node = 0; node < n; ++node) {
      if (!disc.inside[node]) {
        next[node] = 0.0;
        continue;
      }
      const double c = psi[node];
      double best = -INFINITY;
      for (std::size_t k = 0; k < na; ++k) {
        const Stencil& st = disc.stencils[node * na + k];
        double incr = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const std::size_t s = disc.stride[i];
          incr += st.up[i] * (psi[node + s] - c) + st.down[i] * (psi[node - s] - c);
        }
        best = std::max(best, c + dtau * incr);
      }
      next[node] = std::clamp(best, 0.0, 1.0);
    }
    psi.swap(next);
  }
  return field;
}

double dirichlet_survival_series(double x, double tau, double half_width, double sigma,
                                 double tolerance) {
  const double b = half_width;
  if (std::abs(x) >= b) {
    return 0.0;
  }
  if (tau <= 0.0 || sigma == 0.0) {
    return 1.0;
  }
  // u(t, y) on (0, L), L = 2b: odd modes n with coefficient 4 / (n pi).
  const double L = 2.0 * b;
  const double y = x + b;
  const double rate = sigma * sigma * std::numbers::pi * std::numbers::pi * tau / (2.0 * L * L);
  double sum = 0.0;
  for (long n = 1; n < 2000001; n += 2) {
    const double nn = static_cast<double>(n);
    const double decay = std::exp(-rate * nn * nn);
    const double coef = 4.0 / (nn * std::numbers::pi);
    sum += coef * decay * std::sin(nn * std::numbers::pi * y / L);
    if (coef * decay < tolerance) {
      break;
    }
  }
  return std::clamp(sum, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

sde::Policy greedy_policy(const qnet::QNetwork& net, const Environment& env) {
  return [&net, &env](const sde::AugmentedState& s) { return net.greedy_action(env.net_input(s)); };
}

sde::Policy constant_policy(std::size_t action) {
  return [action](const sde::AugmentedState&) { return action; };
}

std::vector<sde::McEstimate> evaluate_policy_mc(const Environment& env, const sde::Policy& policy,
                                                const std::vector<sde::AugmentedState>& states,
                                                const McRequest& request, const Rng& rng) {
  const EnvSettings& es = env.settings();
  const sde::McOptions opt{es.dt, es.n_substeps, request.n_rollouts, request.threads};
  std::vector<sde::McEstimate> out;
  out.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Rng base = request.common_random_numbers ? rng : rng.split(i);
    out.push_back(sde::mc_safety_probability(env.system(), env.safe_set(), policy, states[i], opt, base));
  }
  return out;
}

PairedEstimate paired_safety(const Environment& env, const sde::Policy& a, const sde::Policy& b,
                             const std::function<sde::AugmentedState(Rng&)>& initial, long n,
                             const Rng& rng, unsigned threads) {
  if (n < 1) {
    throw ContractViolation("paired_safety: n must be >= 1");
  }
  const EnvSettings& es = env.settings();
  std::vector<signed char> ra(static_cast<std::size_t>(n));
  std::vector<signed char> rb(static_cast<std::size_t>(n));
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  auto worker = [&](unsigned t) {
    for (long j = t; j < n; j += threads) {
      const Rng r = rng.split(static_cast<std::uint64_t>(j));
      Rng init = r.split(0);
      const sde::AugmentedState s0 = initial(init);
      Rng na = r.split(1);
      Rng nb = r.split(1);
      ra[static_cast<std::size_t>(j)] = sde::safety_rollout(env.system(), env.safe_set(), a, s0, es.dt, es.n_substeps, na);
      rb[static_cast<std::size_t>(j)] = sde::safety_rollout(env.system(), env.safe_set(), b, s0, es.dt, es.n_substeps, nb);
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back(worker, t);
    }
    for (auto& th : pool) {
      th.join();
    }
  }
  long sa = 0;
  long sb = 0;
  double mean = 0.0;
  for (long j = 0; j < n; ++j) {
    sa += ra[static_cast<std::size_t>(j)];
    sb += rb[static_cast<std::size_t>(j)];
    mean += static_cast<double>(ra[static_cast<std::size_t>(j)] - rb[static_cast<std::size_t>(j)]);
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (long j = 0; j < n; ++j) {
    const double dj = static_cast<double>(ra[static_cast<std::size_t>(j)] - rb[static_cast<std::size_t>(j)]) - mean;
    var += dj * dj;
  }
  var = n > 1 ? var / static_cast<double>(n - 1) : 0.0;
  PairedEstimate p;
  p.a = sde::binomial_estimate(sa, n);
  p.b = sde::binomial_estimate(sb, n);
  p.diff = mean;
  p.diff_half_width_95 = 1.96 * std::sqrt(var / static_cast<double>(n));
  return p;
}

// ---------------------------------------------------------------------------

ValueFn value_function(const qnet::QNetwork& net, const Environment& env) {
  return [&net, &env](double tau, const Vector& x) {
    return net.forward(env.net_input({tau, x})).maxCoeff();
  };
}

namespace {

class ReportBuilder {
 public:
  explicit ReportBuilder(double band) : band_(band) {}
  void add(double err, double distance) {
    const double e = std::abs(err);
    r_.mae += e;
    r_.max_abs = std::max(r_.max_abs, e);
    ++r_.count;
    if (distance < band_) {
      r_.mae_band += e;
      ++r_.count_band;
    } else {
      r_.mae_interior += e;
      ++r_.count_interior;
    }
  }
  CompareReport finish() {
    if (r_.count > 0) {
      r_.mae /= static_cast<double>(r_.count);
    }
    if (r_.count_band > 0) {
      r_.mae_band /= static_cast<double>(r_.count_band);
    }
    if (r_.count_interior > 0) {
      r_.mae_interior /= static_cast<double>(r_.count_interior);
    }
    return r_;
  }

 private:
  double band_;
  CompareReport r_;
};

}  // namespace

CompareReport compare_at(const ValueFn& value, const SafetyField& field, const sde::SafeSet& safe_set,
                         const std::vector<sde::AugmentedState>& probes, double band) {
  ReportBuilder rb(band);
  for (const auto& p : probes) {
    rb.add(value(p.horizon, p.x) - field.interpolate(p.horizon, p.x), safe_set.signed_distance(p.x));
  }
  return rb.finish();
}

CompareReport compare_field(const ValueFn& value, const SafetyField& field,
                            const sde::SafeSet& safe_set, double tau, double band) {
  const std::size_t k = field.nearest_tau(tau);
  ReportBuilder rb(band);
  for (std::size_t node = 0; node < field.num_nodes(); ++node) {
    const Vector x = field.node_point(node);
    const double dist = safe_set.signed_distance(x);
    if (dist <= 0.0) {
      continue;
    }
    rb.add(value(field.taus()[k], x) - field.value(k, node), dist);
  }
  return rb.finish();
}

void check_field_matches(const SafetyField& field, const Environment& env) {
  if (field.dim() != env.system().state_dim()) {
    throw DimensionMismatch("field has " + std::to_string(field.dim()) +
                            " axes but the environment state has " +
                            std::to_string(env.system().state_dim()) + " coordinates");
  }
}

void write_heatmap_csv(const std::filesystem::path& path, const std::string& x_name,
                       const std::vector<double>& xs, const std::string& y_name,
                       const std::vector<double>& ys,
                       const std::vector<std::vector<double>>& values) {
  if (values.size() != ys.size()) {
    throw DimensionMismatch("heatmap: one row per y value expected");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  char buf[64];
  out << y_name << "\\" << x_name;
  for (double x : xs) {
    std::snprintf(buf, sizeof buf, "%.10g", x);
    out << ',' << buf;
  }
  out << '\n';
  for (std::size_t j = 0; j < ys.size(); ++j) {
    if (values[j].size() != xs.size()) {
      throw DimensionMismatch("heatmap: row length does not match the x axis");
    }
    std::snprintf(buf, sizeof buf, "%.10g", ys[j]);
    out << buf;
    for (double v : values[j]) {
      std::snprintf(buf, sizeof buf, "%.10g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

}  // namespace pirl::oracle
