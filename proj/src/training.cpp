#include "pirl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <memory>
#include <sstream>

#include "pirl/errors.hpp"

namespace pirl::training {

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) {
    throw ConfigError("replay memory: capacity must be >= 1");
  }
  items_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayMemory::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayMemory::at(std::size_t i) const {
  if (i >= items_.size()) {
    throw ContractViolation("replay memory: index out of range");
  }
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Transition*> ReplayMemory::sample(std::size_t n, Rng& rng) const {
  if (n > items_.size()) {
    throw ContractViolation("replay memory: minibatch larger than the memory");
  }
  // Rejection of repeats is cheap because n is tiny compared to the memory.
  std::vector<std::size_t> picked;
  picked.reserve(n);
  while (picked.size() < n) {
    const std::size_t i = rng.index(items_.size());
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) {
      picked.push_back(i);
    }
  }
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i : picked) {
    out.push_back(&items_[i]);
  }
  return out;
}

void TrainConfig::validate() const {
  if (episodes < 0) {
    throw ConfigError("train: episodes must be >= 0");
  }
  if (!(lambda >= 0.0) || !(mu >= 0.0)) {
    throw ConfigError("train: lambda and mu must be >= 0");
  }
  if (!(eta > 0.0 && eta <= 1.0)) {
    throw ConfigError("train: eta must lie in (0, 1]");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (!(learning_rate_final < 0.0 || learning_rate_final > 0.0)) {
    throw ConfigError("train: learning_rate_final must be positive (or negative to disable decay)");
  }
  if (optimizer != "adam" && optimizer != "sgd") {
    throw ConfigError("train: optimizer must be 'adam' or 'sgd'");
  }
  if (batch_data < 1 || batch_pde < 1 || batch_boundary < 1) {
    throw ConfigError("train: batch sizes must be >= 1");
  }
  if (memory_capacity < batch_data) {
    throw ConfigError("train: memory_capacity must hold at least one minibatch");
  }
  if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0)) {
    throw ConfigError("train: exploration rates must lie in [0, 1]");
  }
  if (!(eps_decay_fraction >= 0.0 && eps_decay_fraction <= 1.0)) {
    throw ConfigError("train: eps_decay_fraction must lie in [0, 1]");
  }
  if (!(boundary_epsilon >= 0.0)) {
    throw ConfigError("train: boundary_epsilon must be >= 0");
  }
  if (learn_every < 1 || moving_window < 1) {
    throw ConfigError("train: learn_every and moving_window must be >= 1");
  }
  network.validate();
}

double exploration_rate(const TrainConfig& c, long episode) {
  const double decay = c.eps_decay_fraction * static_cast<double>(c.episodes);
  if (decay <= 0.0 || static_cast<double>(episode) >= decay) {
    return c.eps_end;
  }
  return c.eps_start + (c.eps_end - c.eps_start) * static_cast<double>(episode) / decay;
}

double learning_rate_at(const TrainConfig& c, long episode) {
  if (c.learning_rate_final < 0.0 || c.episodes <= 1) {
    return c.learning_rate;
  }
  const double w = static_cast<double>(episode) / static_cast<double>(c.episodes - 1);
  return c.learning_rate + (c.learning_rate_final - c.learning_rate) * w;
}

AugmentedState sample_initial_state(const Environment& env, const TrainConfig& config, Rng& rng) {
  const double tau_d = config.initial_horizon(env.settings());
  AugmentedState s;
  s.x = env.sample_initial(rng);
  s.horizon = config.random_initial_horizon ? rng.uniform(0.0, tau_d) : tau_d;
  return s;
}

AugmentedState sample_collocation(const Environment& env, Rng& rng) {
  AugmentedState s;
  s.horizon = rng.uniform(0.0, env.settings().tau_max);
  s.x = env.interior_region().sample(rng);
  return s;
}

BoundarySample sample_boundary(const Environment& env, Rng& rng) {
  BoundarySample b;
  if (rng.bernoulli(0.5)) {
    b.branch = 1;
    b.s.horizon = 0.0;
    b.s.x = env.interior_region().sample(rng);
  } else {
    b.branch = 2;
    b.s.horizon = rng.uniform(0.0, env.settings().tau_max);
    b.s.x = env.boundary_region().sample(rng);
  }
  return b;
}

Matrix input_batch(const Environment& env, const std::vector<AugmentedState>& states) {
  const auto cols = static_cast<Eigen::Index>(states.size());
  const auto rows = static_cast<Eigen::Index>(env.feature_dim() + 1);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    m.col(j) = env.net_input(states[static_cast<std::size_t>(j)]);
  }
  return m;
}

std::vector<double> dqn_targets(const Environment& env, const std::vector<const Transition*>& batch,
                                const QNetwork& target) {
  std::vector<double> y(batch.size());
  std::vector<AugmentedState> next;
  std::vector<std::size_t> where;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    y[j] = batch[j]->reward;
    if (!batch[j]->terminal) {
      next.push_back(batch[j]->next);
      where.push_back(j);
    }
  }
  if (!next.empty()) {
    const Matrix q = target.forward_batch(input_batch(env, next));
    for (std::size_t k = 0; k < where.size(); ++k) {
      y[where[k]] += q.col(static_cast<Eigen::Index>(k)).maxCoeff();
    }
  }
  return y;
}

double loss_data(const QNetwork& net, const Matrix& inputs, const std::vector<std::size_t>& actions,
                 const std::vector<double>& targets, Vector* grad, double weight) {
  const auto n = inputs.cols();
  if (static_cast<std::size_t>(n) != actions.size() || actions.size() != targets.size()) {
    throw DimensionMismatch("loss_data: batch, actions and targets differ in length");
  }
  if (n == 0) {
    return 0.0;
  }
  qnet::BatchPass pass(net, inputs);
  const Matrix& q = pass.q();
  double sum = 0.0;
  qnet::BatchPass::Seeds seeds;
  if (grad != nullptr) {
    seeds.value = Matrix::Zero(q.rows(), q.cols());
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto a = static_cast<Eigen::Index>(actions[static_cast<std::size_t>(j)]);
    const double diff = q(a, j) - targets[static_cast<std::size_t>(j)];
    sum += diff * diff;
    if (grad != nullptr) {
      seeds.value(a, j) = weight * 2.0 * diff / static_cast<double>(n);
    }
  }
  if (grad != nullptr) {
    pass.backward(seeds, grad);
  }
  return sum / static_cast<double>(n);
}

namespace {

// Residuals at given (or greedy, when `actions` is empty on entry) actions.
PdeBatch pde_batch(const QNetwork& net, const Environment& env,
                   const std::vector<AugmentedState>& states, std::vector<std::size_t> actions,
                   bool with_diffusion, PdeGradMode mode, Vector* grad, double weight) {
  PdeBatch out;
  const auto n = static_cast<Eigen::Index>(states.size());
  if (n == 0) {
    return out;
  }
  const Matrix inputs = input_batch(env, states);
  if (actions.empty()) {
    const Matrix q = net.forward_batch(inputs);
    for (Eigen::Index j = 0; j < n; ++j) {
      actions.push_back(qnet::argmax(q.col(j)));
    }
  }
  const auto dim = inputs.rows();
  Matrix conv = Matrix::Zero(dim, n);
  std::vector<Matrix> noise;
  sde::Vector drift;
  sde::Matrix diff;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& s = states[static_cast<std::size_t>(j)];
    env.pde_coefficients(s.x, actions[static_cast<std::size_t>(j)], with_diffusion, drift, diff);
    if (drift.size() != dim - 1 || diff.rows() != dim - 1) {
      throw DimensionMismatch("pde residual: coefficient shape does not match the features");
    }
    conv(0, j) = -1.0;
    conv.col(j).tail(dim - 1) = drift;
    while (static_cast<Eigen::Index>(noise.size()) < diff.cols()) {
      noise.push_back(Matrix::Zero(dim, n));
    }
    for (Eigen::Index i = 0; i < diff.cols(); ++i) {
      noise[static_cast<std::size_t>(i)].col(j).tail(dim - 1) = diff.col(i);
    }
  }
  std::vector<qnet::BatchPass::Channel> channels;
  channels.push_back({std::move(conv), false});
  for (auto& m : noise) {
    channels.push_back({std::move(m), true});
  }
  const std::size_t w = channels.size() - 1;
  qnet::BatchPass pass(net, inputs, std::move(channels));

  out.residuals.resize(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto a = static_cast<Eigen::Index>(actions[static_cast<std::size_t>(j)]);
    double r = pass.q_d1(0)(a, j);
    for (std::size_t i = 1; i <= w; ++i) {
      r += 0.5 * pass.q_d2(i)(a, j);
    }
    out.residuals[static_cast<std::size_t>(j)] = r;
    sum += r * r;
  }
  out.loss = sum / static_cast<double>(n);
  out.actions = std::move(actions);

  if (grad != nullptr) {
    const Matrix zero = Matrix::Zero(net.spec().output_dim, n);
    qnet::BatchPass::Seeds seeds;
    seeds.d1.push_back(zero);
    if (mode == PdeGradMode::kExact) {
      seeds.d2.assign(w + 1, zero);
      seeds.d2[0] = Matrix();  // the convection channel is first order only
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto a = static_cast<Eigen::Index>(out.actions[static_cast<std::size_t>(j)]);
      const double g = weight * 2.0 * out.residuals[static_cast<std::size_t>(j)] / static_cast<double>(n);
      seeds.d1[0](a, j) = g;
      if (mode == PdeGradMode::kExact) {
        for (std::size_t i = 1; i <= w; ++i) {
          seeds.d2[i](a, j) = 0.5 * g;
        }
      }
    }
    pass.backward(seeds, grad);
  }
  return out;
}

}  // namespace

double pde_residual(const QNetwork& net, const Environment& env, const AugmentedState& s,
                    std::size_t action, bool with_diffusion) {
  return pde_batch(net, env, {s}, {action}, with_diffusion, PdeGradMode::kExact, nullptr, 0.0)
      .residuals.front();
}

PdeBatch loss_pde(const QNetwork& net, const Environment& env,
                  const std::vector<AugmentedState>& states, bool with_diffusion, PdeGradMode mode,
                  Vector* grad, double weight) {
  return pde_batch(net, env, states, {}, with_diffusion, mode, grad, weight);
}

BoundaryBatch loss_boundary(const QNetwork& net, const Environment& env,
                            const std::vector<AugmentedState>& states, double epsilon, Vector* grad,
                            double weight) {
  BoundaryBatch out;
  const auto n = static_cast<Eigen::Index>(states.size());
  if (n == 0) {
    return out;
  }
  qnet::BatchPass pass(net, input_batch(env, states));
  const Matrix& q = pass.q();
  qnet::BatchPass::Seeds seeds;
  if (grad != nullptr) {
    seeds.value = Matrix::Zero(q.rows(), q.cols());
  }
  double sum = 0.0;
  out.residuals.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto a = static_cast<Eigen::Index>(qnet::argmax(q.col(j)));
    const double r = q(a, j) - env.safe_set().mollifier(states[static_cast<std::size_t>(j)].x, epsilon);
    out.residuals[static_cast<std::size_t>(j)] = r;
    sum += r * r;
    if (grad != nullptr) {
      seeds.value(a, j) = weight * 2.0 * r / static_cast<double>(n);
    }
  }
  out.loss = sum / static_cast<double>(n);
  if (grad != nullptr) {
    pass.backward(seeds, grad);
  }
  return out;
}

void soft_update(QNetwork& target, const QNetwork& online, double eta) {
  if (target.params().size() != online.params().size()) {
    throw DimensionMismatch("soft_update: networks differ in shape");
  }
  if (eta == 1.0) {
    target.params() = online.params();
    return;
  }
  target.params() = eta * online.params() + (1.0 - eta) * target.params();
}

qnet::InputScaling input_scaling_for(const Environment& env) {
  std::vector<double> lo{0.0};
  std::vector<double> hi{0.0};
  for (const FeatureRange& r : env.feature_ranges()) {
    lo.push_back(r.lo);
    hi.push_back(r.hi);
  }
  qnet::InputScaling s = qnet::InputScaling::from_ranges(lo, hi);
  const double tau = env.settings().tau_max;
  s.offset[0] = 0.0;
  s.scale[0] = tau > 0.0 ? 1.0 / tau : 1.0;
  return s;
}

LossReport combined_loss(const QNetwork& net, const QNetwork& target, const Environment& env,
                         const TrainConfig& config, const std::vector<const Transition*>& data,
                         const std::vector<AugmentedState>& collocation,
                         const std::vector<AugmentedState>& boundary, Vector& grad) {
  grad = Vector::Zero(net.params().size());
  LossReport rep;
  const std::vector<double> y = dqn_targets(env, data, target);
  std::vector<AugmentedState> states;
  std::vector<std::size_t> actions;
  states.reserve(data.size());
  for (const Transition* t : data) {
    states.push_back(t->s);
    actions.push_back(t->action);
  }
  rep.l_data = loss_data(net, input_batch(env, states), actions, y, &grad);
  for (double v : y) {
    rep.mean_target += v / static_cast<double>(y.size());
  }
  if (config.lambda > 0.0 && !collocation.empty()) {
    const PdeBatch p = loss_pde(net, env, collocation, config.pde_diffusion, config.pde_grad_mode,
                                &grad, config.lambda);
    rep.l_pde = p.loss;
    for (double r : p.residuals) {
      rep.mean_abs_wp += std::abs(r) / static_cast<double>(p.residuals.size());
    }
  }
  if (config.mu > 0.0 && !boundary.empty()) {
    const BoundaryBatch b = loss_boundary(net, env, boundary, config.boundary_epsilon, &grad, config.mu);
    rep.l_boundary = b.loss;
    for (double r : b.residuals) {
      rep.mean_abs_wb += std::abs(r) / static_cast<double>(b.residuals.size());
    }
  }
  rep.total = rep.l_data + config.lambda * rep.l_pde + config.mu * rep.l_boundary;
  return rep;
}

// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<qnet::Optimizer> make_optimizer(const TrainConfig& c) {
  if (c.optimizer == "sgd") {
    return std::make_unique<qnet::Sgd>(c.learning_rate);
  }
  return std::make_unique<qnet::Adam>(c.learning_rate);
}

std::string snapshot(long episode, long step, const LossReport& rep, const QNetwork& net) {
  std::ostringstream out;
  out << "episode=" << episode << " learn_step=" << step << " L_D=" << rep.l_data
      << " L_P=" << rep.l_pde << " L_B=" << rep.l_boundary << " mean|W_P|=" << rep.mean_abs_wp
      << " mean|W_B|=" << rep.mean_abs_wb << " |theta|=" << net.params().norm();
  return out.str();
}

class MovingAverage {
 public:
  explicit MovingAverage(std::size_t window) : window_(window) {}
  double push(double v) {
    values_.push_back(v);
    sum_ += v;
    if (values_.size() > window_) {
      sum_ -= values_.front();
      values_.pop_front();
    }
    return sum_ / static_cast<double>(values_.size());
  }

 private:
  std::size_t window_;
  std::deque<double> values_;
  double sum_ = 0.0;
};

}  // namespace

TrainResult train(const Environment& env, const TrainConfig& config, const TrainHooks& hooks) {
  qnet::NetworkSpec spec = config.network;
  spec.input_dim = env.feature_dim() + 1;
  spec.output_dim = env.system().num_actions();
  Rng init = stream(config.seed, StreamPurpose::kInit);
  return train(env, config, QNetwork::glorot(spec, input_scaling_for(env), init), hooks);
}

TrainResult train(const Environment& env, const TrainConfig& config, QNetwork initial,
                  const TrainHooks& hooks) {
  config.validate();
  if (initial.spec().input_dim != env.feature_dim() + 1 ||
      initial.spec().output_dim != env.system().num_actions()) {
    throw DimensionMismatch("train: network shape does not match the environment");
  }
  const auto start = std::chrono::steady_clock::now();
  TrainResult res{initial, initial, {}, 0};
  QNetwork& net = res.net;
  QNetwork& target = res.target;
  auto opt = make_optimizer(config);
  ReplayMemory memory(config.memory_capacity);
  Rng replay_rng = stream(config.seed, StreamPurpose::kReplay);
  Rng colloc_rng = stream(config.seed, StreamPurpose::kCollocation);
  const sde::StepConfig step_cfg = env.settings().step_config();
  const std::size_t num_actions = env.system().num_actions();
  const std::size_t learn_start = std::max(config.learn_start, config.batch_data);
  MovingAverage reward_avg(config.moving_window);
  MovingAverage q_avg(config.moving_window);
  long env_steps = 0;
  Vector grad;
  std::vector<AugmentedState> colloc(config.batch_pde);
  std::vector<AugmentedState> bound(config.batch_boundary);
  res.metrics.reserve(static_cast<std::size_t>(config.episodes));

  for (long ep = 0; ep < config.episodes; ++ep) {
    const auto uep = static_cast<std::uint64_t>(ep);
    Rng init_rng = stream(config.seed, StreamPurpose::kInitialState, uep);
    Rng env_rng = stream(config.seed, StreamPurpose::kEnvironment, uep);
    Rng explore_rng = stream(config.seed, StreamPurpose::kExploration, uep);
    const double eps = exploration_rate(config, ep);
    opt->set_learning_rate(learning_rate_at(config, ep));

    EpisodeMetrics m;
    m.episode = ep;
    m.eps_greedy = eps;
    AugmentedState s = sample_initial_state(env, config, init_rng);
    m.q_init = sde::is_absorbing(s, env.safe_set()) ? 0.0 : net.forward(env.net_input(s)).maxCoeff();
    long learn_count = 0;

    while (!sde::is_absorbing(s, env.safe_set())) {
      std::size_t a;
      if (explore_rng.uniform() < eps) {
        a = explore_rng.index(num_actions);
      } else {
        a = net.greedy_action(env.net_input(s));
      }
      sde::StepResult r;
      try {
        r = sde::step_augmented(env.system(), env.safe_set(), s, a, step_cfg, env_rng);
      } catch (const IntegrationDiverged& e) {
        throw NumericAbort(e.what(), "episode=" + std::to_string(ep));
      }
      m.reward += r.reward;
      ++m.steps;
      ++env_steps;
      Transition t{s, a, r.reward, r.next, r.terminal};
      if (hooks.on_transition) {
        hooks.on_transition(t);
      }
      memory.push(std::move(t));
      s = std::move(r.next);

      if (memory.size() >= learn_start && env_steps % config.learn_every == 0) {
        const auto batch = memory.sample(config.batch_data, replay_rng);
        if (config.lambda > 0.0) {
          for (auto& c : colloc) {
            c = sample_collocation(env, colloc_rng);
          }
        }
        if (config.mu > 0.0) {
          for (auto& b : bound) {
            b = sample_boundary(env, colloc_rng).s;
          }
        }
        const LossReport rep = combined_loss(net, target, env, config, batch,
                                             config.lambda > 0.0 ? colloc : std::vector<AugmentedState>{},
                                             config.mu > 0.0 ? bound : std::vector<AugmentedState>{}, grad);
        if (!std::isfinite(rep.total) || !grad.allFinite()) {
          throw NumericAbort("non-finite loss during training", snapshot(ep, res.learn_steps, rep, net));
        }
        opt->step(net.params(), grad);
        soft_update(target, net, config.eta);
        ++res.learn_steps;
        ++learn_count;
        m.l_data += rep.l_data;
        m.l_pde += rep.l_pde;
        m.l_boundary += rep.l_boundary;
      }
    }
    if (learn_count > 0) {
      m.l_data /= static_cast<double>(learn_count);
      m.l_pde /= static_cast<double>(learn_count);
      m.l_boundary /= static_cast<double>(learn_count);
    }
    m.moving_avg = reward_avg.push(m.reward);
    m.q_moving_avg = q_avg.push(m.q_init);
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.metrics.push_back(m);
    if (hooks.on_episode) {
      hooks.on_episode(m, net);
    }
  }
  return res;
}

}  // namespace pirl::training
