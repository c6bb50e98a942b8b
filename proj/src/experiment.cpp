#include "pirl/experiment.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "pirl/errors.hpp"
#include "pirl/oracle.hpp"
#include "pirl/training.hpp"
#include "pirl/vehicle.hpp"

namespace pirl::experiment {

namespace fs = std::filesystem;
using config::Json;

Trajectory record_rollout(const Environment& env, const sde::Policy& policy,
                          const sde::AugmentedState& s0, Rng& rng) {
  const EnvSettings& es = env.settings();
  Trajectory tr;
  const long steps = sde::control_steps(s0.horizon, es.dt);
  sde::AugmentedState s = s0;
  tr.t.push_back(0.0);
  tr.x.push_back(s.x);
  tr.safe = steps >= 0 && env.safe_set().contains(s.x);
  for (long k = 1; tr.safe && k <= steps; ++k) {
    const std::size_t a = policy(s);
    tr.actions.push_back(a);
    tr.rewards.push_back(sde::reward_mollified(s, env.safe_set(), es.dt, es.reward_epsilon));
    s.x = sde::step_euler_maruyama(env.system(), s.x, a, es.dt, rng, es.n_substeps);
    s.horizon = s0.horizon - static_cast<double>(k) * es.dt;
    tr.t.push_back(static_cast<double>(k) * es.dt);
    tr.x.push_back(s.x);
    tr.safe = env.safe_set().contains(s.x);
  }
  return tr;
}

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::vector<std::string> trajectory_columns(const Environment& env) {
  if (dynamic_cast<const vehicle::VehicleEnvironment*>(&env) != nullptr) {
    return {"t", "v_x", "beta", "r", "e", "psi", "delta", "d", "reward"};
  }
  std::vector<std::string> cols{"t"};
  for (const auto& n : env.state_names()) {
    cols.push_back(n);
  }
  cols.push_back("u");
  cols.push_back("reward");
  return cols;
}

void write_trajectory_csv(const fs::path& path, const Environment& env, const Trajectory& traj) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  const auto cols = trajectory_columns(env);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out << (i ? "," : "") << cols[i];
  }
  out << '\n';
  const auto* veh = dynamic_cast<const vehicle::VehicleEnvironment*>(&env);
  const auto* bro = dynamic_cast<const BrownianEnvironment*>(&env);
  for (std::size_t k = 0; k < traj.x.size(); ++k) {
    const sde::Vector& x = traj.x[k];
    const bool has_action = k < traj.actions.size();
    out << format_number(traj.t[k]);
    if (veh != nullptr) {
      for (Eigen::Index i = 0; i < vehicle::kArc; ++i) {
        out << ',' << format_number(x[i]);
      }
      if (has_action) {
        const auto act = veh->vehicle_system().actions().decode(traj.actions[k]);
        out << ',' << format_number(veh->vehicle_system().steering_angle(traj.actions[k])) << ','
            << format_number(act.throttle);
      } else {
        out << ",,";
      }
    } else {
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        out << ',' << format_number(x[i]);
      }
      out << ',';
      if (has_action) {
        out << (bro != nullptr ? format_number(bro->brownian_system().control(traj.actions[k]))
                               : std::to_string(traj.actions[k]));
      }
    }
    out << ',' << format_number(has_action ? traj.rewards[k] : 0.0) << '\n';
  }
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

qnet::QNetwork load_network(const Json& cfg, const Environment& env,
                            const std::optional<fs::path>& checkpoint) {
  if (checkpoint) {
    qnet::QNetwork net = qnet::checkpoint_load(*checkpoint);
    if (net.spec().input_dim != env.feature_dim() + 1 ||
        net.spec().output_dim != env.system().num_actions()) {
      throw DimensionMismatch("checkpoint network takes " + std::to_string(net.spec().input_dim) +
                              " inputs and has " + std::to_string(net.spec().output_dim) +
                              " outputs; env '" + env.kind() + "' needs " +
                              std::to_string(env.feature_dim() + 1) + " and " +
                              std::to_string(env.system().num_actions()));
    }
    return net;
  }
  const training::TrainConfig tc = config::train_config(cfg);
  qnet::NetworkSpec spec = tc.network;
  spec.input_dim = env.feature_dim() + 1;
  spec.output_dim = env.system().num_actions();
  Rng init = stream(tc.seed, StreamPurpose::kInit);
  return qnet::QNetwork::glorot(spec, training::input_scaling_for(env), init);
}

MapSpec MapSpec::from_config(const Json& cfg) {
  const Json& m = cfg.at("map");
  MapSpec s;
  s.x = m.at("x").get<std::string>();
  s.x_min = m.at("x_min").get<double>();
  s.x_max = m.at("x_max").get<double>();
  s.x_points = m.at("x_points").get<long>();
  s.y = m.at("y").get<std::string>();
  s.y_min = m.at("y_min").get<double>();
  s.y_max = m.at("y_max").get<double>();
  s.y_points = m.at("y_points").get<long>();
  s.tau = m.at("tau").get<double>();
  for (const auto& [k, v] : m.at("fixed").items()) {
    s.fixed.emplace_back(k, v.get<double>());
  }
  return s;
}

namespace {

std::vector<double> axis_values(double lo, double hi, long n) {
  if (n < 1) {
    throw ConfigError("map: an axis needs at least one point");
  }
  std::vector<double> v;
  for (long i = 0; i < n; ++i) {
    v.push_back(n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return v;
}

// -1 for tau, otherwise the state index.
int coordinate(const Environment& env, const std::string& name) {
  if (name == "tau") {
    return -1;
  }
  const int i = env.state_index(name);
  if (i < 0) {
    std::string known = "tau";
    for (const auto& n : env.state_names()) {
      known += ", " + n;
    }
    throw ConfigError("map: unknown coordinate '" + name + "' (known: " + known + ")");
  }
  return i;
}

void set_coordinate(sde::AugmentedState& s, int index, double v) {
  if (index < 0) {
    s.horizon = v;
  } else {
    s.x[index] = v;
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) {
    throw IoError("cannot write " + path.string());
  }
}

Json estimate_json(const sde::McEstimate& e) {
  return {{"estimate", e.estimate}, {"half_width_95", e.half_width_95}, {"n", e.n}};
}

sde::Vector parse_state(const std::string& text, const Environment& env) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    const char* b = item.data();
    const char* e = b + item.size();
    while (b < e && *b == ' ') {
      ++b;
    }
    const auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) {
      throw ConfigError("state: cannot parse '" + item + "'");
    }
    vals.push_back(v);
  }
  if (vals.size() != env.system().state_dim()) {
    throw ConfigError("state: expected " + std::to_string(env.system().state_dim()) + " comma-separated values");
  }
  return Eigen::Map<sde::Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionMismatch& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const CflError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericAbort& e) {
    err << "numeric abort: " << e.what() << '\n' << e.snapshot() << '\n';
    return 3;
  } catch (const IntegrationDiverged& e) {
    err << "numeric abort: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const CheckpointError& e) {
    err << "I/O error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

SafetyMap safety_map(const qnet::QNetwork& net, const Environment& env, const MapSpec& spec) {
  const int ix = coordinate(env, spec.x);
  const int iy = coordinate(env, spec.y);
  if (ix == iy) {
    throw ConfigError("map: x and y must be different coordinates");
  }
  sde::AugmentedState base{spec.tau < 0.0 ? env.settings().tau_max : spec.tau, env.reference_state()};
  for (const auto& [name, v] : spec.fixed) {
    set_coordinate(base, coordinate(env, name), v);
  }
  SafetyMap m;
  m.xs = axis_values(spec.x_min, spec.x_max, spec.x_points);
  m.ys = axis_values(spec.y_min, spec.y_max, spec.y_points);
  for (double y : m.ys) {
    std::vector<double> row;
    for (double x : m.xs) {
      sde::AugmentedState s = base;
      set_coordinate(s, ix, x);
      set_coordinate(s, iy, y);
      row.push_back(net.forward(env.net_input(s)).maxCoeff());
    }
    m.values.push_back(std::move(row));
  }
  return m;
}

// ---------------------------------------------------------------------------

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Json cfg = config::load(args.config);
    if (args.output_dir) {
      cfg["output_dir"] = args.output_dir->string();
    }
    if (args.seed) {
      cfg["seed"] = *args.seed;
    }
    const auto env = config::make_environment(cfg);
    const training::TrainConfig tc = config::train_config(cfg);
    const fs::path dir = cfg["output_dir"].get<std::string>();
    const long ckpt_every = cfg["output"]["checkpoint_every"].get<long>();
    const bool wall = cfg["output"]["record_wall_time"].get<bool>();
    ensure_dir(dir);
    write_text(dir / "config.toml", config::emit_toml(cfg));
    if (ckpt_every > 0) {
      ensure_dir(dir / "checkpoints");
    }
    std::ofstream metrics(dir / "metrics.csv", std::ios::trunc);
    if (!metrics) {
      throw IoError("cannot write " + (dir / "metrics.csv").string());
    }
    metrics << "episode,reward,moving_avg,L_D,L_P,L_B,eps_greedy,wall_time,q_init,q_moving_avg\n";
    const std::string tag = "env=" + env->kind() + " seed=" + std::to_string(tc.seed);
    training::TrainHooks hooks;
    hooks.on_episode = [&](const training::EpisodeMetrics& m, const qnet::QNetwork& net) {
      metrics << m.episode << ',' << format_number(m.reward) << ',' << format_number(m.moving_avg) << ','
              << format_number(m.l_data) << ',' << format_number(m.l_pde) << ','
              << format_number(m.l_boundary) << ',' << format_number(m.eps_greedy) << ','
              << format_number(wall ? m.wall_time : 0.0) << ',' << format_number(m.q_init) << ','
              << format_number(m.q_moving_avg) << '\n';
      if (ckpt_every > 0 && (m.episode + 1) % ckpt_every == 0) {
        std::ostringstream name;
        name << "episode_" << std::setw(7) << std::setfill('0') << m.episode + 1 << ".ckpt";
        qnet::checkpoint_save(net, dir / "checkpoints" / name.str(), tag);
      }
    };
    const auto start = std::chrono::steady_clock::now();
    training::TrainResult res = training::train(*env, tc, hooks);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    metrics.close();
    if (!metrics) {
      throw IoError("write failed for " + (dir / "metrics.csv").string());
    }
    qnet::checkpoint_save(res.net, dir / "model.ckpt", tag);
    Json summary = {{"seed", tc.seed},
                    {"env", env->kind()},
                    {"episodes", tc.episodes},
                    {"learn_steps", res.learn_steps},
                    {"checkpoint", "model.ckpt"}};
    if (!res.metrics.empty()) {
      const auto& last = res.metrics.back();
      summary["final_moving_avg_reward"] = last.moving_avg;
      summary["final_q_moving_avg"] = last.q_moving_avg;
      summary["final_L_D"] = last.l_data;
      summary["final_L_P"] = last.l_pde;
      summary["final_L_B"] = last.l_boundary;
    }
    if (wall) {
      summary["wall_time_s"] = seconds;
    }
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    out << "trained " << tc.episodes << " episodes (" << res.learn_steps << " gradient steps) in "
        << std::fixed << std::setprecision(1) << seconds << " s; outputs in " << dir.string() << '\n';
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Json user = config::load(args.config);
    if (args.n_rollouts) {
      user["eval"]["n_rollouts"] = *args.n_rollouts;
    }
    if (args.initial) {
      user["eval"]["initial"] = *args.initial;
    }
    const Json cfg = config::resolve(user);
    const auto env = config::make_environment(cfg);
    const qnet::QNetwork net = load_network(cfg, *env, args.checkpoint);
    const qnet::QNetwork untrained = load_network(cfg, *env, std::nullopt);
    const Json& ev = cfg["eval"];
    const long n = ev["n_rollouts"].get<long>();
    const long n_traj = std::min<long>(n, ev["trajectories"].get<long>());
    const double horizon = ev["horizon"].get<double>() < 0.0 ? env->settings().tau_max
                                                             : ev["horizon"].get<double>();
    const bool reference = ev["initial"].get<std::string>() == "reference";
    const std::uint64_t seed = cfg["seed"].get<std::uint64_t>();
    const Rng rng = stream(seed, StreamPurpose::kEvaluation);
    auto initial = [&](Rng& r) {
      return sde::AugmentedState{horizon, reference ? env->reference_state() : env->sample_initial(r)};
    };
    const sde::Policy greedy = oracle::greedy_policy(net, *env);
    const sde::Policy baseline = oracle::greedy_policy(untrained, *env);
    const auto threads = static_cast<unsigned>(ev["threads"].get<long>());
    const oracle::PairedEstimate p = oracle::paired_safety(*env, greedy, baseline, initial, n, rng, threads);

    const fs::path dir = args.output_dir ? *args.output_dir
                                         : (args.checkpoint ? args.checkpoint->parent_path() / "eval"
                                                            : fs::path(cfg["output_dir"].get<std::string>()) / "eval");
    ensure_dir(dir / "trajectories");
    long completed = 0;
    for (long j = 0; j < n_traj; ++j) {
      const Rng r = rng.split(static_cast<std::uint64_t>(j));
      Rng init = r.split(0);
      Rng noise = r.split(1);
      const Trajectory tr = record_rollout(*env, greedy, initial(init), noise);
      completed += tr.safe ? 1 : 0;
      std::ostringstream name;
      name << "rollout_" << std::setw(3) << std::setfill('0') << j << ".csv";
      write_trajectory_csv(dir / "trajectories" / name.str(), *env, tr);
    }
    Json summary = {{"seed", seed},
                    {"env", env->kind()},
                    {"horizon", horizon},
                    {"n_rollouts", n},
                    {"initial", ev["initial"]},
                    {"checkpoint", args.checkpoint ? args.checkpoint->string() : "untrained"},
                    {"safety", estimate_json(p.a)},
                    {"trajectories_written", n_traj},
                    {"trajectories_safe", completed}};
    if (ev["baseline"].get<bool>()) {
      summary["untrained_baseline"] = estimate_json(p.b);
      summary["difference"] = {{"estimate", p.diff}, {"half_width_95", p.diff_half_width_95}};
    }
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    out << "safety " << p.a.estimate << " +/- " << p.a.half_width_95 << " over " << n << " rollouts";
    if (ev["baseline"].get<bool>()) {
      out << " (untrained " << p.b.estimate << ", paired difference " << p.diff << " +/- "
          << p.diff_half_width_95 << ")";
    }
    out << "; outputs in " << dir.string() << '\n';
  });
}

int cmd_oracle(const OracleArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Json cfg = config::load(args.config);
    const auto env = config::make_environment(cfg);
    const oracle::FdOptions opt = config::oracle_options(cfg, *env);
    const oracle::SafetyField field = oracle::solve_hjb_fd(env->system(), env->safe_set(), opt);
    const fs::path path = args.output ? *args.output : fs::path(cfg["output_dir"].get<std::string>()) / "field.json";
    if (path.has_parent_path()) {
      ensure_dir(path.parent_path());
    }
    field.save(path);
    out << "solved on " << field.num_nodes() << " nodes with dtau " << field.dtau << "; wrote "
        << path.string() << '\n';
  });
}

int cmd_export_map(const ExportMapArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Json cfg = config::load(args.config);
    const auto env = config::make_environment(cfg);
    MapSpec spec = MapSpec::from_config(cfg);
    if (args.x) {
      spec.x = *args.x;
    }
    if (args.y) {
      spec.y = *args.y;
    }
    if (args.tau) {
      spec.tau = *args.tau;
    }
    for (const auto& f : args.fixed) {
      const auto eq = f.find('=');
      double v = 0.0;
      if (eq == std::string::npos) {
        throw ConfigError("--fix expects name=value, got '" + f + "'");
      }
      const std::string num = f.substr(eq + 1);
      const auto r = std::from_chars(num.data(), num.data() + num.size(), v);
      if (r.ec != std::errc() || r.ptr != num.data() + num.size()) {
        throw ConfigError("--fix: cannot parse value in '" + f + "'");
      }
      spec.fixed.emplace_back(f.substr(0, eq), v);
    }
    const qnet::QNetwork net = load_network(cfg, *env, args.checkpoint);
    const SafetyMap m = safety_map(net, *env, spec);
    const fs::path path = args.output ? *args.output
                                      : fs::path(cfg["output_dir"].get<std::string>()) /
                                            ("map_" + spec.y + "_" + spec.x + ".csv");
    if (path.has_parent_path()) {
      ensure_dir(path.parent_path());
    }
    oracle::write_heatmap_csv(path, spec.x, m.xs, spec.y, m.ys, m.values);
    out << "wrote " << m.ys.size() << "x" << m.xs.size() << " map to " << path.string() << '\n';
  });
}

int cmd_rollout(const RolloutArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    Json cfg = config::load(args.config);
    if (args.seed) {
      cfg["seed"] = *args.seed;
    }
    const auto env = config::make_environment(cfg);
    const qnet::QNetwork net = load_network(cfg, *env, args.checkpoint);
    const std::uint64_t seed = cfg["seed"].get<std::uint64_t>();
    const Rng r = stream(seed, StreamPurpose::kEvaluation).split(0);
    Rng init = r.split(0);
    Rng noise = r.split(1);
    sde::AugmentedState s0;
    s0.horizon = args.horizon ? *args.horizon : env->settings().tau_max;
    s0.x = args.state ? parse_state(*args.state, *env) : env->sample_initial(init);
    const Trajectory tr = record_rollout(*env, oracle::greedy_policy(net, *env), s0, noise);
    const fs::path path = args.output ? *args.output
                                      : fs::path(cfg["output_dir"].get<std::string>()) / "rollout.csv";
    if (path.has_parent_path()) {
      ensure_dir(path.parent_path());
    }
    write_trajectory_csv(path, *env, tr);
    out << (tr.safe ? "stayed safe" : "left the safe set") << " after " << tr.t.back() << " s; wrote "
        << path.string() << '\n';
  });
}

}  // namespace pirl::experiment
