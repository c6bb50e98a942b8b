#include "pirl/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "pirl/errors.hpp"
#include "pirl/vehicle.hpp"

namespace pirl::config {

namespace {

// ---------------------------------------------------------------------------
// TOML subset

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (in_string && s[i] == '\\') {
      ++i;
    } else if (s[i] == '"') {
      in_string = !in_string;
    } else if (s[i] == '#' && !in_string) {
      return s.substr(0, i);
    }
  }
  return s;
}

bool bare_key(const std::string& k) {
  if (k.empty()) {
    return false;
  }
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) {
      return false;
    }
  }
  return true;
}

// Bracket depth outside strings.
int bracket_balance(const std::string& s) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (in_string && s[i] == '\\') {
      ++i;
    } else if (s[i] == '"') {
      in_string = !in_string;
    } else if (!in_string) {
      depth += s[i] == '[' ? 1 : s[i] == ']' ? -1 : 0;
    }
  }
  return depth;
}

class ValueParser {
 public:
  ValueParser(const std::string& text, std::size_t line) : s_(text), line_(line) {}

  Json parse_all() {
    Json v = value();
    skip_ws();
    if (pos_ != s_.size()) {
      fail(line_, "unexpected text after value: '" + s_.substr(pos_) + "'");
    }
    return v;
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r')) {
      ++pos_;
    }
  }

  Json value() {
    skip_ws();
    if (pos_ >= s_.size()) {
      fail(line_, "missing value");
    }
    const char c = s_[pos_];
    if (c == '"') {
      return string();
    }
    if (c == '[') {
      return array();
    }
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return true;
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return false;
    }
    return number();
  }

  Json string() {
    std::string out;
    ++pos_;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (pos_ >= s_.size()) {
          break;
        }
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(line_, std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (pos_ >= s_.size()) {
      fail(line_, "unterminated string");
    }
    ++pos_;
    return out;
  }

  Json array() {
    Json arr = Json::array();
    ++pos_;
    while (true) {
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(value());
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == ',') {
        ++pos_;
      } else if (pos_ >= s_.size() || s_[pos_] != ']') {
        fail(line_, "expected ',' or ']' in array");
      }
    }
  }

  Json number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != ' ' && s_[pos_] != '\t' &&
           s_[pos_] != '\n') {
      ++pos_;
    }
    std::string tok = s_.substr(start, pos_ - start);
    std::erase(tok, '_');
    if (tok.empty()) {
      fail(line_, "missing value");
    }
    const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
    const char* e = tok.data() + tok.size();
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      std::int64_t v = 0;
      const auto r = std::from_chars(b, e, v);
      if (r.ec == std::errc() && r.ptr == e) {
        return v;
      }
    } else {
      double v = 0.0;
      const auto r = std::from_chars(b, e, v);
      if (r.ec == std::errc() && r.ptr == e) {
        return v;
      }
    }
    fail(line_, "cannot parse value '" + tok + "'");
  }

  const std::string& s_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) {
    s += ".0";
  }
  return s;
}

std::string format_scalar(const Json& v) {
  if (v.is_string()) {
    std::string out = "\"";
    for (char c : v.get<std::string>()) {
      switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default: out.push_back(c);
      }
    }
    return out + "\"";
  }
  if (v.is_boolean()) {
    return v.get<bool>() ? "true" : "false";
  }
  if (v.is_number_float()) {
    return format_double(v.get<double>());
  }
  if (v.is_number_unsigned()) {
    return std::to_string(v.get<std::uint64_t>());
  }
  if (v.is_number_integer()) {
    return std::to_string(v.get<std::int64_t>());
  }
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
      out += (i ? ", " : "") + format_scalar(v[i]);
    }
    return out + "]";
  }
  throw ConfigError("config: cannot write value of this type");
}

void emit_table(const Json& j, const std::string& prefix, std::string& out) {
  for (const auto& [k, v] : j.items()) {
    if (!v.is_object()) {
      out += k + " = " + format_scalar(v) + "\n";
    }
  }
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      const std::string name = prefix.empty() ? k : prefix + "." + k;
      out += "\n[" + name + "]\n";
      emit_table(v, name, out);
    }
  }
}

// ---------------------------------------------------------------------------
// Defaults and merging

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const Json& j, std::size_t n, const std::string& what) {
  if (j.size() != n) {
    throw ConfigError(what + " needs " + std::to_string(n) + " entries");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Json settings_json(const std::string& kind, const EnvSettings& s) {
  return {{"kind", kind}, {"dt", s.dt}, {"n_substeps", s.n_substeps}, {"tau_max", s.tau_max},
          {"reward_epsilon", s.reward_epsilon}};
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(lo + (hi - lo) * i / (n - 1));
  }
  return out;
}

vehicle::VehicleEnvConfig vehicle_base(const std::string& kind) {
  return kind == "drift" ? vehicle::drift_defaults() : vehicle::cornering_defaults();
}

const std::set<std::string> kFreeTables{"map.fixed"};

void merge(Json& def, const Json& usr, const std::string& path) {
  if (!usr.is_object()) {
    throw ConfigError("config: '" + path + "' must be a table");
  }
  const bool free_form = kFreeTables.count(path) > 0;
  for (const auto& [k, v] : usr.items()) {
    const std::string where = path.empty() ? k : path + "." + k;
    if (free_form) {
      if (!v.is_number()) {
        throw ConfigError("config: '" + where + "' must be a number");
      }
      def[k] = v.get<double>();
      continue;
    }
    if (!def.contains(k)) {
      throw ConfigError("config: unknown key '" + where + "'");
    }
    Json& d = def[k];
    auto mismatch = [&](const char* want) {
      throw ConfigError("config: '" + where + "' must be " + want);
    };
    if (d.is_object()) {
      merge(d, v, where);
    } else if (d.is_number_float()) {
      if (!v.is_number()) {
        mismatch("a number");
      }
      d = v.get<double>();
    } else if (d.is_number_integer()) {
      if (!v.is_number_integer()) {
        mismatch("an integer");
      }
      d = v;
    } else if (d.is_boolean()) {
      if (!v.is_boolean()) {
        mismatch("true or false");
      }
      d = v;
    } else if (d.is_string()) {
      if (!v.is_string()) {
        mismatch("a string");
      }
      d = v;
    } else if (d.is_array()) {
      if (!v.is_array()) {
        mismatch("an array");
      }
      const bool strings = !d.empty() && d[0].is_string();
      Json arr = Json::array();
      for (const auto& e : v) {
        if (strings ? !e.is_string() : !e.is_number()) {
          mismatch(strings ? "an array of strings" : "an array of numbers");
        }
        arr.push_back(strings ? e : Json(e.get<double>()));
      }
      d = arr;
    }
  }
}

void validate(const Json& cfg) {
  const auto env = make_environment(cfg);
  train_config(cfg).validate();
  const Json& ev = cfg["eval"];
  if (ev["n_rollouts"].get<long>() < 1) {
    throw ConfigError("eval.n_rollouts must be >= 1");
  }
  if (ev["trajectories"].get<long>() < 0 || ev["threads"].get<long>() < 1) {
    throw ConfigError("eval.trajectories must be >= 0 and eval.threads >= 1");
  }
  const std::string init = ev["initial"].get<std::string>();
  if (init != "sample" && init != "reference") {
    throw ConfigError("eval.initial must be 'sample' or 'reference'");
  }
  if (cfg["output"]["checkpoint_every"].get<long>() < 0) {
    throw ConfigError("output.checkpoint_every must be >= 0");
  }
  const Json& m = cfg["map"];
  if (m["x_points"].get<long>() < 1 || m["y_points"].get<long>() < 1) {
    throw ConfigError("map: x_points and y_points must be >= 1");
  }
}

}  // namespace

Json parse_toml(const std::string& text) {
  Json root = Json::object();
  Json* table = &root;
  std::set<std::string> headers;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = trim(strip_comment(raw));
    if (s.empty()) {
      continue;
    }
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) {
        fail(line, "malformed table header");
      }
      const std::string name = trim(s.substr(1, s.size() - 2));
      if (!headers.insert(name).second) {
        fail(line, "table [" + name + "] defined twice");
      }
      table = &root;
      std::stringstream parts(name);
      std::string part;
      while (std::getline(parts, part, '.')) {
        part = trim(part);
        if (!bare_key(part)) {
          fail(line, "bad table name '" + name + "'");
        }
        Json& next = (*table)[part];
        if (next.is_null()) {
          next = Json::object();
        } else if (!next.is_object()) {
          fail(line, "'" + part + "' is already a value");
        }
        table = &next;
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      fail(line, "expected 'key = value'");
    }
    const std::string key = trim(s.substr(0, eq));
    if (!bare_key(key)) {
      fail(line, "bad key '" + key + "'");
    }
    std::string value = trim(s.substr(eq + 1));
    const std::size_t first = line;
    while (bracket_balance(value) > 0 && std::getline(in, raw)) {
      ++line;
      value += "\n" + trim(strip_comment(raw));
    }
    if (table->contains(key)) {
      fail(first, "key '" + key + "' defined twice");
    }
    (*table)[key] = ValueParser(value, first).parse_all();
  }
  return root;
}

std::string emit_toml(const Json& j) {
  std::string out;
  emit_table(j, "", out);
  return out;
}

Json defaults_for(const std::string& kind) {
  Json j;
  j["seed"] = 0;
  j["output_dir"] = "runs/" + kind;
  Json map;
  Json ora = {{"dtau", 0.0}, {"cfl_safety", 0.9}, {"epsilon", -1.0}, {"fixed_action", -1}};
  if (kind == "brownian") {
    const BrownianConfig b;
    j["env"] = settings_json(kind, b.settings);
    j["env"]["brownian"] = {{"half_width", b.half_width}, {"sigma", b.sigma}, {"u_max", b.u_max},
                            {"initial_low", b.initial_low}, {"initial_high", b.initial_high}};
    ora["axes_min"] = {-b.half_width};
    ora["axes_max"] = {b.half_width};
    ora["points"] = {401.0};
    ora["tau_max"] = b.settings.tau_max;
    ora["snapshots"] = linspace(0.0, b.settings.tau_max, 11);
    map = {{"x", "x"}, {"x_min", -b.half_width}, {"x_max", b.half_width}, {"x_points", 41},
           {"y", "tau"}, {"y_min", 0.0}, {"y_max", b.settings.tau_max}, {"y_points", 11},
           {"tau", -1.0}, {"fixed", Json::object()}};
  } else if (kind == "cornering" || kind == "drift") {
    const vehicle::VehicleEnvConfig v = vehicle_base(kind);
    j["env"] = settings_json(kind, v.settings);
    const auto& p = v.vehicle;
    j["env"]["vehicle"] = {{"mass", p.mass},
                           {"lf", p.lf},
                           {"lr", p.lr},
                           {"yaw_inertia", p.yaw_inertia},
                           {"front_cornering_stiffness", p.front.cornering_stiffness},
                           {"front_friction", p.front.friction},
                           {"rear_cornering_stiffness", p.rear.cornering_stiffness},
                           {"rear_friction", p.rear.friction},
                           {"max_steer", p.max_steer},
                           {"max_drive_force", p.max_drive_force},
                           {"drag_coefficient", p.drag_coefficient},
                           {"v_min", p.v_min},
                           {"gravity", p.gravity}};
    const auto& seg = v.road.segments();
    const double curv = seg.at(1).curvature;
    j["env"]["road"] = {{"entry", seg.at(0).length},
                        {"radius", 1.0 / std::abs(curv)},
                        {"arc_angle", seg.at(1).length * std::abs(curv)},
                        {"exit", seg.at(2).length},
                        {"half_width", v.road.half_width()},
                        {"left", curv > 0.0}};
    j["env"]["actions"] = {{"steering", v.actions.steering}, {"throttle", v.actions.throttle}};
    j["env"]["noise"] = {{"sigma", v.sigma}};
    j["env"]["regions"] = {{"initial_lo", to_vec(v.initial.lo)},
                           {"initial_hi", to_vec(v.initial.hi)},
                           {"interior_lo", to_vec(v.interior.lo)},
                           {"interior_hi", to_vec(v.interior.hi)},
                           {"reference", to_vec(v.reference)},
                           {"align_heading_with_velocity", v.align_heading_with_velocity},
                           {"lookahead", v.lookahead}};
    ora["axes_min"] = Json::array();
    ora["axes_max"] = Json::array();
    ora["points"] = Json::array();
    ora["tau_max"] = v.settings.tau_max;
    ora["snapshots"] = Json::array();
    const double hw = v.road.half_width();
    map = {{"x", "e"}, {"x_min", -hw}, {"x_max", hw}, {"x_points", 41},
           {"y", "psi"}, {"y_min", -0.5}, {"y_max", 0.5}, {"y_points", 41},
           {"tau", v.settings.tau_max}, {"fixed", Json::object()}};
  } else {
    throw ConfigError("config: env.kind must be brownian, cornering or drift (got '" + kind + "')");
  }

  const training::TrainConfig t;
  j["network"] = {{"hidden_layers", t.network.hidden_layers}, {"hidden_width", t.network.hidden_width}};
  j["train"] = {{"episodes", t.episodes},
                {"lambda", t.lambda},
                {"mu", t.mu},
                {"eta", t.eta},
                {"learning_rate", t.learning_rate},
                {"learning_rate_final", t.learning_rate_final},
                {"optimizer", t.optimizer},
                {"batch_data", t.batch_data},
                {"batch_pde", t.batch_pde},
                {"batch_boundary", t.batch_boundary},
                {"memory_capacity", t.memory_capacity},
                {"eps_start", t.eps_start},
                {"eps_end", t.eps_end},
                {"eps_decay_fraction", t.eps_decay_fraction},
                {"tau_d", t.tau_d},
                {"random_initial_horizon", t.random_initial_horizon},
                {"boundary_epsilon", t.boundary_epsilon},
                {"pde_diffusion", t.pde_diffusion},
                {"pde_grad_mode", "exact"},
                {"learn_start", t.learn_start},
                {"learn_every", t.learn_every},
                {"moving_window", t.moving_window}};
  j["output"] = {{"checkpoint_every", 0}, {"record_wall_time", false}};
  j["oracle"] = ora;
  j["eval"] = {{"n_rollouts", 100}, {"threads", 1}, {"trajectories", 20}, {"initial", "sample"},
               {"baseline", true}, {"horizon", -1.0}};
  j["map"] = map;
  // Integers stay integers in the schema so that type checks can tell them apart.
  for (auto* t2 : {&j["network"], &j["train"]}) {
    for (auto& [k, v] : t2->items()) {
      if (v.is_number_unsigned()) {
        v = static_cast<std::int64_t>(v.get<std::uint64_t>());
      }
    }
  }
  return j;
}

Json resolve(const Json& user) {
  if (!user.is_object()) {
    throw ConfigError("config: top level must be a table");
  }
  std::string kind = "brownian";
  if (user.contains("env") && user["env"].is_object() && user["env"].contains("kind")) {
    if (!user["env"]["kind"].is_string()) {
      throw ConfigError("config: env.kind must be a string");
    }
    kind = user["env"]["kind"].get<std::string>();
  }
  Json cfg = defaults_for(kind);
  merge(cfg, user, "");
  if (cfg["seed"].get<std::int64_t>() < 0) {
    throw ConfigError("config: seed must be >= 0");
  }
  validate(cfg);
  return cfg;
}

Json load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config file not found: " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  Json user = parse_toml(buf.str());
  if (const char* dir = std::getenv("PIRL_OUTPUT_DIR"); dir != nullptr && *dir != '\0') {
    user["output_dir"] = dir;
  }
  if (const char* seed = std::getenv("PIRL_SEED"); seed != nullptr && *seed != '\0') {
    std::int64_t v = 0;
    const char* end = seed + std::char_traits<char>::length(seed);
    const auto r = std::from_chars(seed, end, v);
    if (r.ec != std::errc() || r.ptr != end || v < 0) {
      throw ConfigError(std::string("PIRL_SEED is not a non-negative integer: ") + seed);
    }
    user["seed"] = v;
  }
  return resolve(user);
}

std::unique_ptr<Environment> make_environment(const Json& cfg) {
  const Json& e = cfg.at("env");
  const std::string kind = e.at("kind").get<std::string>();
  EnvSettings settings{e.at("dt").get<double>(), e.at("n_substeps").get<int>(),
                       e.at("tau_max").get<double>(), e.at("reward_epsilon").get<double>()};
  if (kind == "brownian") {
    const Json& b = e.at("brownian");
    BrownianConfig c;
    c.half_width = b.at("half_width").get<double>();
    c.sigma = b.at("sigma").get<double>();
    c.u_max = b.at("u_max").get<double>();
    c.initial_low = b.at("initial_low").get<double>();
    c.initial_high = b.at("initial_high").get<double>();
    c.settings = settings;
    return make_brownian_benchmark(c);
  }
  vehicle::VehicleEnvConfig c = vehicle_base(kind);
  c.settings = settings;
  const Json& p = e.at("vehicle");
  c.vehicle.mass = p.at("mass").get<double>();
  c.vehicle.lf = p.at("lf").get<double>();
  c.vehicle.lr = p.at("lr").get<double>();
  c.vehicle.yaw_inertia = p.at("yaw_inertia").get<double>();
  c.vehicle.front = {p.at("front_cornering_stiffness").get<double>(), p.at("front_friction").get<double>()};
  c.vehicle.rear = {p.at("rear_cornering_stiffness").get<double>(), p.at("rear_friction").get<double>()};
  c.vehicle.max_steer = p.at("max_steer").get<double>();
  c.vehicle.max_drive_force = p.at("max_drive_force").get<double>();
  c.vehicle.drag_coefficient = p.at("drag_coefficient").get<double>();
  c.vehicle.v_min = p.at("v_min").get<double>();
  c.vehicle.gravity = p.at("gravity").get<double>();
  c.vehicle.validate();
  const Json& r = e.at("road");
  const double radius = r.at("radius").get<double>();
  if (!(radius > 0.0)) {
    throw ConfigError("env.road.radius must be positive");
  }
  c.road = vehicle::RoadGeometry::straight_arc_straight(
      r.at("entry").get<double>(), radius, r.at("arc_angle").get<double>(), r.at("exit").get<double>(),
      r.at("half_width").get<double>(), r.at("left").get<bool>());
  c.actions.steering = e.at("actions").at("steering").get<std::vector<double>>();
  c.actions.throttle = e.at("actions").at("throttle").get<std::vector<double>>();
  if (c.actions.steering.empty() || c.actions.throttle.empty()) {
    throw ConfigError("env.actions: steering and throttle grids must be non-empty");
  }
  const Eigen::VectorXd sigma = from_vec(e.at("noise").at("sigma"), 5, "env.noise.sigma");
  for (int i = 0; i < 5; ++i) {
    c.sigma[static_cast<std::size_t>(i)] = sigma[i];
  }
  const Json& g = e.at("regions");
  c.initial = Box{from_vec(g.at("initial_lo"), 6, "env.regions.initial_lo"),
                  from_vec(g.at("initial_hi"), 6, "env.regions.initial_hi")};
  c.interior = Box{from_vec(g.at("interior_lo"), 6, "env.regions.interior_lo"),
                   from_vec(g.at("interior_hi"), 6, "env.regions.interior_hi")};
  c.reference = from_vec(g.at("reference"), 6, "env.regions.reference");
  c.align_heading_with_velocity = g.at("align_heading_with_velocity").get<bool>();
  const Eigen::VectorXd look = from_vec(g.at("lookahead"), 5, "env.regions.lookahead");
  for (int i = 0; i < 5; ++i) {
    c.lookahead[static_cast<std::size_t>(i)] = look[i];
  }
  return kind == "drift" ? vehicle::make_drift_env(std::move(c)) : vehicle::make_cornering_env(std::move(c));
}

training::TrainConfig train_config(const Json& cfg) {
  const Json& t = cfg.at("train");
  training::TrainConfig c;
  c.episodes = t.at("episodes").get<long>();
  c.lambda = t.at("lambda").get<double>();
  c.mu = t.at("mu").get<double>();
  c.eta = t.at("eta").get<double>();
  c.learning_rate = t.at("learning_rate").get<double>();
  c.learning_rate_final = t.at("learning_rate_final").get<double>();
  c.optimizer = t.at("optimizer").get<std::string>();
  auto count = [&](const char* key) {
    const auto v = t.at(key).get<std::int64_t>();
    if (v < 0) {
      throw ConfigError(std::string("train.") + key + " must be >= 0");
    }
    return static_cast<std::size_t>(v);
  };
  c.batch_data = count("batch_data");
  c.batch_pde = count("batch_pde");
  c.batch_boundary = count("batch_boundary");
  c.memory_capacity = count("memory_capacity");
  c.eps_start = t.at("eps_start").get<double>();
  c.eps_end = t.at("eps_end").get<double>();
  c.eps_decay_fraction = t.at("eps_decay_fraction").get<double>();
  c.tau_d = t.at("tau_d").get<double>();
  c.random_initial_horizon = t.at("random_initial_horizon").get<bool>();
  c.boundary_epsilon = t.at("boundary_epsilon").get<double>();
  c.pde_diffusion = t.at("pde_diffusion").get<bool>();
  const std::string mode = t.at("pde_grad_mode").get<std::string>();
  if (mode == "exact") {
    c.pde_grad_mode = training::PdeGradMode::kExact;
  } else if (mode == "stop_hessian") {
    c.pde_grad_mode = training::PdeGradMode::kStopHessian;
  } else {
    throw ConfigError("train.pde_grad_mode must be 'exact' or 'stop_hessian'");
  }
  c.learn_start = count("learn_start");
  c.learn_every = t.at("learn_every").get<int>();
  c.moving_window = count("moving_window");
  c.seed = cfg.at("seed").get<std::uint64_t>();
  c.network.hidden_layers = static_cast<std::size_t>(cfg.at("network").at("hidden_layers").get<std::int64_t>());
  c.network.hidden_width = static_cast<std::size_t>(cfg.at("network").at("hidden_width").get<std::int64_t>());
  return c;
}

oracle::FdOptions oracle_options(const Json& cfg, const Environment& env) {
  const std::size_t dim = env.system().state_dim();
  if (dim > 2) {
    throw ConfigError("oracle: the finite-difference solver handles at most 2 state dimensions; env '" +
                      env.kind() + "' has " + std::to_string(dim));
  }
  const Json& o = cfg.at("oracle");
  const auto lo = o.at("axes_min").get<std::vector<double>>();
  const auto hi = o.at("axes_max").get<std::vector<double>>();
  const auto pts = o.at("points").get<std::vector<double>>();
  if (lo.size() != dim || hi.size() != dim || pts.size() != dim) {
    throw ConfigError("oracle: axes_min, axes_max and points need one entry per state dimension");
  }
  oracle::FdOptions f;
  const auto names = env.state_names();
  for (std::size_t i = 0; i < dim; ++i) {
    if (pts[i] < 3 || pts[i] != std::floor(pts[i])) {
      throw ConfigError("oracle.points must be integers >= 3");
    }
    f.axes.push_back({names[i], lo[i], hi[i], static_cast<std::size_t>(pts[i])});
  }
  f.tau_max = o.at("tau_max").get<double>();
  f.dtau = o.at("dtau").get<double>();
  f.cfl_safety = o.at("cfl_safety").get<double>();
  f.epsilon = o.at("epsilon").get<double>();
  f.snapshots = o.at("snapshots").get<std::vector<double>>();
  const auto fixed = o.at("fixed_action").get<std::int64_t>();
  if (fixed >= 0) {
    f.fixed_action = static_cast<std::size_t>(fixed);
  }
  f.system_id = env.kind();
  return f;
}

}  // namespace pirl::config
