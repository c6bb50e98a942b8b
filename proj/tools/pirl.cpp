// pirl: train, evaluate and inspect safety-probability Q-networks.

#include <iostream>

#include <CLI11.hpp>

#include "pirl/experiment.hpp"

namespace ex = pirl::experiment;

int main(int argc, char** argv) {
  CLI::App app{"Physics-informed DQN for maximal safety probabilities"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "pirl 1.0");
  app.footer(
      "Exit codes: 0 success, 2 config error, 3 numeric abort, 4 I/O error.\n"
      "Environment: PIRL_OUTPUT_DIR and PIRL_SEED override output_dir and seed in the config.");

  ex::TrainArgs train;
  std::string train_out;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "Train a Q-network; writes config.toml, metrics.csv, model.ckpt, summary.json");
  t->add_option("-c,--config", train.config, "Experiment config (TOML)")->required();
  auto* t_out = t->add_option("-o,--output-dir", train_out, "Run directory (overrides output_dir)");
  auto* t_seed = t->add_option("-s,--seed", train_seed, "Root seed (overrides seed)");

  ex::EvalArgs eval;
  std::string eval_ckpt;
  std::string eval_out;
  long eval_n = 0;
  std::string eval_initial;
  auto* e = app.add_subcommand("eval", "Monte-Carlo safety of the greedy policy, paired with the untrained network");
  e->add_option("-c,--config", eval.config, "Experiment config (TOML)")->required();
  auto* e_ck = e->add_option("-k,--checkpoint", eval_ckpt, "Trained network (default: untrained)");
  auto* e_n = e->add_option("-n,--n-rollouts", eval_n, "Number of rollouts (overrides eval.n_rollouts)");
  auto* e_init = e->add_option("--initial", eval_initial, "Initial states: sample | reference");
  auto* e_out = e->add_option("-o,--output-dir", eval_out, "Output directory (default: <checkpoint dir>/eval)");

  ex::OracleArgs ora;
  std::string ora_out;
  auto* o = app.add_subcommand("oracle", "Finite-difference safety field for 1D/2D systems (JSON)");
  o->add_option("-c,--config", ora.config, "Experiment config (TOML)")->required();
  auto* o_out = o->add_option("-o,--output", ora_out, "Field file (default: <output_dir>/field.json)");

  ex::ExportMapArgs map;
  std::string map_ckpt;
  std::string map_out;
  std::string map_x;
  std::string map_y;
  double map_tau = 0.0;
  auto* m = app.add_subcommand("export-map", "CSV heatmap of max_a Q over a 2D slice");
  m->add_option("-c,--config", map.config, "Experiment config (TOML)")->required();
  auto* m_ck = m->add_option("-k,--checkpoint", map_ckpt, "Trained network (default: untrained)");
  auto* m_x = m->add_option("-x", map_x, "Column coordinate (state name or tau)");
  auto* m_y = m->add_option("-y", map_y, "Row coordinate (state name or tau)");
  auto* m_tau = m->add_option("--tau", map_tau, "Remaining horizon for the slice");
  m->add_option("--fix", map.fixed, "Pin a coordinate, name=value (repeatable)");
  auto* m_out = m->add_option("-o,--output", map_out, "CSV file (default: <output_dir>/map_<y>_<x>.csv)");

  ex::RolloutArgs roll;
  std::string roll_ckpt;
  std::string roll_out;
  std::string roll_state;
  double roll_h = 0.0;
  std::uint64_t roll_seed = 0;
  auto* r = app.add_subcommand("rollout", "One closed-loop trajectory as CSV");
  r->add_option("-c,--config", roll.config, "Experiment config (TOML)")->required();
  auto* r_ck = r->add_option("-k,--checkpoint", roll_ckpt, "Trained network (default: untrained)");
  auto* r_state = r->add_option("--state", roll_state, "Initial physical state, comma-separated");
  auto* r_h = r->add_option("--horizon", roll_h, "Horizon in seconds (default: tau_max)");
  auto* r_seed = r->add_option("-s,--seed", roll_seed, "Root seed (overrides seed)");
  auto* r_out = r->add_option("-o,--output", roll_out, "CSV file (default: <output_dir>/rollout.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  if (t->parsed()) {
    if (*t_out) train.output_dir = train_out;
    if (*t_seed) train.seed = train_seed;
    return ex::cmd_train(train, std::cout, std::cerr);
  }
  if (e->parsed()) {
    if (*e_ck) eval.checkpoint = eval_ckpt;
    if (*e_n) eval.n_rollouts = eval_n;
    if (*e_init) eval.initial = eval_initial;
    if (*e_out) eval.output_dir = eval_out;
    return ex::cmd_eval(eval, std::cout, std::cerr);
  }
  if (o->parsed()) {
    if (*o_out) ora.output = ora_out;
    return ex::cmd_oracle(ora, std::cout, std::cerr);
  }
  if (m->parsed()) {
    if (*m_ck) map.checkpoint = map_ckpt;
    if (*m_x) map.x = map_x;
    if (*m_y) map.y = map_y;
    if (*m_tau) map.tau = map_tau;
    if (*m_out) map.output = map_out;
    return ex::cmd_export_map(map, std::cout, std::cerr);
  }
  if (r->parsed()) {
    if (*r_ck) roll.checkpoint = roll_ckpt;
    if (*r_state) roll.state = roll_state;
    if (*r_h) roll.horizon = roll_h;
    if (*r_seed) roll.seed = roll_seed;
    if (*r_out) roll.output = roll_out;
    return ex::cmd_rollout(roll, std::cout, std::cerr);
  }
  return 2;
}
