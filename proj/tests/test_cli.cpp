#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "pirl/config.hpp"
#include "pirl/errors.hpp"
#include "pirl/experiment.hpp"
#include "pirl/oracle.hpp"
#include "pirl/vehicle.hpp"

using namespace pirl;
using config::Json;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("pirl_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name) << text;
    return path_ / name;
  }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string small_brownian(const fs::path& out, long episodes = 20) {
  return "output_dir = \"" + out.string() + "\"\n[env]\nkind = \"brownian\"\n[train]\nepisodes = " +
         std::to_string(episodes) + "\nbatch_data = 8\nbatch_pde = 8\nbatch_boundary = 8\n";
}

}  // namespace

TEST(Toml, ParsesSubset) {
  const Json j = config::parse_toml(R"(
# comment
a = 1
b = -2.5e-3   # trailing comment
c = "str # not a comment"
d = true
e = [1, 2.5,
     3]
big = 1_000
[t]
x = "y"
[t.u]
z = []
)");
  EXPECT_EQ(j["a"], 1);
  EXPECT_TRUE(j["a"].is_number_integer());
  EXPECT_DOUBLE_EQ(j["b"].get<double>(), -2.5e-3);
  EXPECT_EQ(j["c"], "str # not a comment");
  EXPECT_EQ(j["d"], true);
  EXPECT_EQ(j["e"].size(), 3u);
  EXPECT_EQ(j["big"], 1000);
  EXPECT_EQ(j["t"]["x"], "y");
  EXPECT_TRUE(j["t"]["u"]["z"].is_array());
}

TEST(Toml, RejectsMalformedInput) {
  EXPECT_THROW(config::parse_toml("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(config::parse_toml("[t]\n[t]\n"), ConfigError);
  EXPECT_THROW(config::parse_toml("a = \n"), ConfigError);
  EXPECT_THROW(config::parse_toml("a = \"open\n"), ConfigError);
  EXPECT_THROW(config::parse_toml("a = 1.2.3\n"), ConfigError);
  EXPECT_THROW(config::parse_toml("just words\n"), ConfigError);
  EXPECT_THROW(config::parse_toml("[bad name]\n"), ConfigError);
}

TEST(Toml, EmitRoundTripsResolvedConfigs) {
  for (const char* kind : {"brownian", "cornering", "drift"}) {
    const Json cfg = config::defaults_for(kind);
    const std::string text = config::emit_toml(cfg);
    EXPECT_EQ(config::parse_toml(text), cfg) << kind;
    EXPECT_EQ(config::emit_toml(config::parse_toml(text)), text) << kind;
  }
  const Json odd = {{"x", 0.1}, {"y", 1e300}, {"z", -0.0}, {"s", "a\"b\\c"}};
  EXPECT_EQ(config::parse_toml(config::emit_toml(odd)), odd);
}

TEST(Config, UnknownKeysAndTypesRejected) {
  EXPECT_THROW(config::resolve(config::parse_toml("[train]\nepisdoes = 3\n")), ConfigError);
  EXPECT_THROW(config::resolve(config::parse_toml("[train]\nepisodes = 1.5\n")), ConfigError);
  EXPECT_THROW(config::resolve(config::parse_toml("[train]\nlambda = \"big\"\n")), ConfigError);
  EXPECT_THROW(config::resolve(config::parse_toml("[env]\nkind = \"boat\"\n")), ConfigError);
  // Vehicle tables do not exist for the Brownian benchmark.
  EXPECT_THROW(config::resolve(config::parse_toml("[env.vehicle]\nmass = 1.0\n")), ConfigError);
  EXPECT_THROW(config::resolve(config::parse_toml("[train]\neta = 0.0\n")), ConfigError);
  EXPECT_THROW(config::resolve(config::parse_toml("[eval]\nn_rollouts = 0\n")), ConfigError);
  EXPECT_THROW(config::resolve(config::parse_toml("[env]\nkind = \"cornering\"\n[env.regions]\nreference = [1.0]\n")),
               ConfigError);
}

TEST(Config, LayeredDefaults) {
  const Json cfg = config::resolve(config::parse_toml("[env]\nkind = \"cornering\"\n[train]\nlambda = 1\n"));
  EXPECT_DOUBLE_EQ(cfg["train"]["lambda"].get<double>(), 1.0);
  EXPECT_TRUE(cfg["train"]["lambda"].is_number_float());
  EXPECT_DOUBLE_EQ(cfg["train"]["mu"].get<double>(), 1e-4);
  const auto env = config::make_environment(cfg);
  EXPECT_EQ(env->kind(), "cornering");
  EXPECT_EQ(env->system().num_actions(), 25u);
  EXPECT_EQ(env->feature_dim(), 15u);
  const auto* veh = dynamic_cast<const vehicle::VehicleEnvironment*>(env.get());
  ASSERT_NE(veh, nullptr);
  const auto def = vehicle::cornering_defaults();
  EXPECT_NEAR(veh->vehicle_system().road().length(), def.road.length(), 1e-9);
  EXPECT_NEAR(veh->vehicle_system().road().curvature_at(50.0), def.road.curvature_at(50.0), 1e-12);
}

TEST(Config, TrainConfigMapping) {
  const Json cfg = config::resolve(config::parse_toml(
      "seed = 9\n[network]\nhidden_width = 7\n[train]\npde_grad_mode = \"stop_hessian\"\nlearn_every = 3\n"));
  const auto tc = config::train_config(cfg);
  EXPECT_EQ(tc.seed, 9u);
  EXPECT_EQ(tc.network.hidden_width, 7u);
  EXPECT_EQ(tc.learn_every, 3);
  EXPECT_EQ(tc.pde_grad_mode, training::PdeGradMode::kStopHessian);
  EXPECT_THROW(config::resolve(config::parse_toml("[train]\npde_grad_mode = \"fast\"\n")), ConfigError);
}

TEST(Config, EnvironmentOverrides) {
  TempDir dir;
  const auto path = dir.write("c.toml", "seed = 1\n");
  ::setenv("PIRL_SEED", "42", 1);
  ::setenv("PIRL_OUTPUT_DIR", "/tmp/elsewhere", 1);
  const Json cfg = config::load(path);
  ::setenv("PIRL_SEED", "-3", 1);
  EXPECT_THROW(config::load(path), ConfigError);
  ::unsetenv("PIRL_SEED");
  ::unsetenv("PIRL_OUTPUT_DIR");
  EXPECT_EQ(cfg["seed"], 42);
  EXPECT_EQ(cfg["output_dir"], "/tmp/elsewhere");
  EXPECT_THROW(config::load(dir.path() / "missing.toml"), ConfigError);
}

TEST(Config, OracleOptions) {
  const Json cfg = config::resolve(Json::object());
  const auto env = config::make_environment(cfg);
  const auto opt = config::oracle_options(cfg, *env);
  ASSERT_EQ(opt.axes.size(), 1u);
  EXPECT_EQ(opt.axes[0].points, 401u);
  EXPECT_EQ(opt.snapshots.size(), 11u);
  const Json drift = config::resolve(config::parse_toml("[env]\nkind = \"drift\"\n"));
  EXPECT_THROW(config::oracle_options(drift, *config::make_environment(drift)), ConfigError);
}

TEST(Commands, MissingConfigExitsWithConfigError) {
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_EQ(experiment::cmd_train({"/nonexistent/bench1d.toml", {}, {}}, out, err), 2);
  EXPECT_NE(err.str().find("not found"), std::string::npos);
}

TEST(Commands, TrainIsByteReproducible) {
  TempDir dir;
  const auto cfg = dir.write("c.toml", small_brownian(dir.path() / "a"));
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(experiment::cmd_train({cfg, {}, {}}, out, err), 0) << err.str();
  ASSERT_EQ(experiment::cmd_train({cfg, dir.path() / "b", {}}, out, err), 0) << err.str();
  for (const char* f : {"metrics.csv", "model.ckpt", "summary.json"}) {
    EXPECT_EQ(slurp(dir.path() / "a" / f), slurp(dir.path() / "b" / f)) << f;
  }
  // Rerunning from the resolved config in the run directory reproduces it too.
  ASSERT_EQ(experiment::cmd_train({dir.path() / "a" / "config.toml", dir.path() / "c", {}}, out, err), 0);
  EXPECT_EQ(slurp(dir.path() / "a" / "metrics.csv"), slurp(dir.path() / "c" / "metrics.csv"));
  ASSERT_EQ(experiment::cmd_train({cfg, dir.path() / "d", 5u}, out, err), 0);
  EXPECT_NE(slurp(dir.path() / "a" / "metrics.csv"), slurp(dir.path() / "d" / "metrics.csv"));

  std::istringstream metrics(slurp(dir.path() / "a" / "metrics.csv"));
  std::string header;
  std::getline(metrics, header);
  EXPECT_EQ(header, "episode,reward,moving_avg,L_D,L_P,L_B,eps_greedy,wall_time,q_init,q_moving_avg");
  long rows = 0;
  for (std::string line; std::getline(metrics, line);) {
    ++rows;
  }
  EXPECT_EQ(rows, 20);
}

TEST(Commands, EvalValidatesAndWritesTrajectories) {
  TempDir dir;
  const auto cfg = dir.write("c.toml", small_brownian(dir.path() / "run"));
  std::ostringstream out;
  std::ostringstream err;
  experiment::EvalArgs args{cfg, {}, 0L, {}, dir.path() / "eval"};
  EXPECT_EQ(experiment::cmd_eval(args, out, err), 2);
  args.n_rollouts = 30L;
  ASSERT_EQ(experiment::cmd_eval(args, out, err), 0) << err.str();
  const Json summary = Json::parse(slurp(dir.path() / "eval" / "summary.json"));
  EXPECT_EQ(summary["n_rollouts"], 30);
  EXPECT_EQ(summary["trajectories_written"], 20);
  const std::string traj = slurp(dir.path() / "eval" / "trajectories" / "rollout_000.csv");
  EXPECT_EQ(traj.substr(0, traj.find('\n')), "t,x,u,reward");
  args.checkpoint = dir.path() / "missing.ckpt";
  EXPECT_EQ(experiment::cmd_eval(args, out, err), 4);
}

TEST(Commands, EvalRejectsCheckpointForOtherEnvironment) {
  TempDir dir;
  const auto bro = dir.write("b.toml", small_brownian(dir.path() / "run", 2));
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(experiment::cmd_train({bro, {}, {}}, out, err), 0);
  const auto veh = dir.write("v.toml", "[env]\nkind = \"cornering\"\n");
  EXPECT_EQ(experiment::cmd_eval({veh, dir.path() / "run" / "model.ckpt", 5L, {}, dir.path() / "e"}, out, err), 2);
}

TEST(Commands, OracleIsDeterministicAndRejectsVehicles) {
  TempDir dir;
  const auto cfg = dir.write("c.toml", "[oracle]\npoints = [101]\n");
  std::ostringstream out;
  std::ostringstream err;
  ASSERT_EQ(experiment::cmd_oracle({cfg, dir.path() / "f1.json"}, out, err), 0) << err.str();
  ASSERT_EQ(experiment::cmd_oracle({cfg, dir.path() / "f2.json"}, out, err), 0);
  EXPECT_EQ(slurp(dir.path() / "f1.json"), slurp(dir.path() / "f2.json"));
  const auto f = oracle::SafetyField::load(dir.path() / "f1.json");
  EXPECT_EQ(f.num_nodes(), 101u);
  EXPECT_EQ(f.system_id, "brownian");
  const auto drift = dir.write("d.toml", "[env]\nkind = \"drift\"\n");
  EXPECT_EQ(experiment::cmd_oracle({drift, dir.path() / "f3.json"}, out, err), 2);
  EXPECT_NE(err.str().find("at most 2"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir.path() / "f3.json"));
}

TEST(Commands, ExportMapSlices) {
  TempDir dir;
  const auto cfg = dir.write("c.toml", "[env]\nkind = \"cornering\"\n[map.fixed]\nv_x = 10.0\n");
  std::ostringstream out;
  std::ostringstream err;
  experiment::ExportMapArgs args;
  args.config = cfg;
  args.output = dir.path() / "m.csv";
  ASSERT_EQ(experiment::cmd_export_map(args, out, err), 0) << err.str();
  const std::string text = slurp(dir.path() / "m.csv");
  EXPECT_EQ(text.substr(0, 10), "psi\\e,-1,-");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 42);

  args.x = "lateral";
  EXPECT_EQ(experiment::cmd_export_map(args, out, err), 2);
  EXPECT_NE(err.str().find("unknown coordinate 'lateral'"), std::string::npos);
  args.x.reset();
  args.fixed = {"speed=3"};
  EXPECT_EQ(experiment::cmd_export_map(args, out, err), 2);
}

TEST(Commands, DegenerateSliceGivesSingleCell) {
  const Json cfg = config::resolve(config::parse_toml("[env]\nkind = \"cornering\"\n"));
  const auto env = config::make_environment(cfg);
  const auto net = experiment::load_network(cfg, *env, std::nullopt);
  experiment::MapSpec spec = experiment::MapSpec::from_config(cfg);
  spec.x_points = 1;
  spec.y_points = 1;
  spec.fixed = {{"v_x", 10.0}};
  const auto m = experiment::safety_map(net, *env, spec);
  ASSERT_EQ(m.values.size(), 1u);
  ASSERT_EQ(m.values[0].size(), 1u);
  sde::AugmentedState s{5.0, env->reference_state()};
  s.x[vehicle::kVx] = 10.0;
  s.x[vehicle::kLateral] = spec.x_min;
  s.x[vehicle::kHeading] = spec.y_min;
  EXPECT_EQ(m.values[0][0], net.forward(env->net_input(s)).maxCoeff());
}

TEST(Commands, RolloutColumnsForVehicles) {
  TempDir dir;
  const auto cfg = dir.write("c.toml", "[env]\nkind = \"cornering\"\n");
  std::ostringstream out;
  std::ostringstream err;
  experiment::RolloutArgs args;
  args.config = cfg;
  args.state = "10, 0, 0, 0, 0, 5";
  args.horizon = 0.5;
  args.output = dir.path() / "r.csv";
  ASSERT_EQ(experiment::cmd_rollout(args, out, err), 0) << err.str();
  std::istringstream in(slurp(dir.path() / "r.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,v_x,beta,r,e,psi,delta,d,reward");
  long rows = 0;
  std::string last;
  while (std::getline(in, line)) {
    ++rows;
    last = line;
  }
  EXPECT_EQ(rows, 11);
  EXPECT_NE(last.find(",,,0"), std::string::npos);
  args.state = "10, 0";
  EXPECT_EQ(experiment::cmd_rollout(args, out, err), 2);
}

TEST(Commands, RecordedRolloutMatchesSafetyRollout) {
  const Json cfg = config::resolve(Json::object());
  const auto env = config::make_environment(cfg);
  const sde::Policy pol = oracle::constant_policy(1);
  for (std::uint64_t j = 0; j < 50; ++j) {
    Rng a(j);
    Rng b(j);
    const sde::AugmentedState s0{1.0, sde::Vector::Constant(1, 0.6)};
    const auto tr = experiment::record_rollout(*env, pol, s0, a);
    EXPECT_EQ(tr.safe, sde::safety_rollout(env->system(), env->safe_set(), pol, s0, 0.02, 1, b));
    EXPECT_EQ(a.counter(), b.counter());
  }
}
