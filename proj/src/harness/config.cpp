#include "hppo/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "hppo/errors.hpp"

namespace hppo::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::istringstream ss(text);
  for (std::string tok; std::getline(ss, tok, ',');) out.push_back(parse_number<T>(key, trim(tok)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define HPPO_INT(name, member)                                                                                \
  Field {                                                                                                     \
    name, [](RunConfig& c, const std::string& v) { c.member = parse_number<int>(name, v); },                 \
        [](const RunConfig& c) { return std::to_string(c.member); }                                          \
  }
#define HPPO_REAL(name, member)                                                                               \
  Field {                                                                                                     \
    name, [](RunConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); },              \
        [](const RunConfig& c) { return fmt(c.member); }                                                     \
  }
#define HPPO_KMH(name, member)                                                                                \
  Field {                                                                                                     \
    name, [](RunConfig& c, const std::string& v) { c.member = parse_number<double>(name, v) / 3.6; },        \
        [](const RunConfig& c) { return fmt(c.member * 3.6); }                                               \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      HPPO_INT("scenario.lanes", scenario.lanes.lane_count),
      HPPO_REAL("scenario.lane_width", scenario.lanes.lane_width),
      HPPO_REAL("scenario.road_length", scenario.lanes.road_length),
      HPPO_INT("scenario.npc_count", scenario.npc_count),
      HPPO_KMH("scenario.cycle_speed_kmh", scenario.cycle_speed),
      Field{"scenario.ego_target_speed_kmh",
            [](RunConfig& c, const std::string& v) {
              c.scenario.ego_target_speed = parse_number<double>("scenario.ego_target_speed_kmh", v) / 3.6;
              c.pilot.target_speed = c.scenario.ego_target_speed;
            },
            [](const RunConfig& c) { return fmt(c.scenario.ego_target_speed * 3.6); }},
      HPPO_INT("scenario.max_episode_steps", scenario.max_episode_steps),
      HPPO_REAL("scenario.dt", scenario.dt),
      HPPO_INT("scenario.ego_start_lane", scenario.ego_start_lane),
      HPPO_REAL("scenario.npc_spawn_min", scenario.npc_spawn_min),
      HPPO_REAL("scenario.npc_spawn_max", scenario.npc_spawn_max),
      HPPO_REAL("scenario.npc_speed_spread", scenario.npc_speed_spread),

      Field{"agent.variant", [](RunConfig& c, const std::string& v) { c.variant = agent::parse_variant(v); },
            [](const RunConfig& c) { return agent::to_string(c.variant); }},
      HPPO_REAL("agent.gamma", agent.gamma),
      HPPO_REAL("agent.clip", agent.clip),
      HPPO_REAL("agent.lambda", agent.lambda),
      HPPO_REAL("agent.learning_rate", agent.learning_rate),
      HPPO_INT("agent.buffer_capacity", agent.buffer_capacity),
      HPPO_INT("agent.update_period", agent.update_period),
      HPPO_INT("agent.epochs", agent.epochs),
      HPPO_REAL("agent.value_weight", agent.value_weight),
      HPPO_REAL("agent.entropy_weight", agent.entropy_weight),
      HPPO_REAL("agent.max_grad_norm", agent.max_grad_norm),
      HPPO_REAL("agent.reward_scale", agent.reward_scale),
      HPPO_INT("agent.hidden", agent.hidden),
      Field{"agent.advantage_norm",
            [](RunConfig& c, const std::string& v) { c.agent.advantage_norm = agent::parse_advantage_norm(v); },
            [](const RunConfig& c) { return agent::to_string(c.agent.advantage_norm); }},

      HPPO_INT("predictor.embed_dim", predictor.embed_dim),
      HPPO_INT("predictor.heads", predictor.heads),
      HPPO_INT("predictor.layers", predictor.layers),
      HPPO_INT("predictor.ffn_dim", predictor.ffn_dim),
      HPPO_INT("predictor.epochs", predictor_train.epochs),
      HPPO_INT("predictor.batch_size", predictor_train.batch_size),
      HPPO_REAL("predictor.learning_rate", predictor_train.learning_rate),
      HPPO_REAL("predictor.validation_fraction", predictor_train.validation_fraction),
      HPPO_REAL("predictor.prefix_mask_prob", predictor_train.prefix_mask_prob),
      HPPO_REAL("predictor.max_seconds", predictor_train.max_seconds),
      HPPO_INT("predictor.collect_vehicles", collect.vehicles),
      HPPO_INT("predictor.collect_steps", collect.steps),
      HPPO_REAL("predictor.collect_rate_hz", collect.rate_hz),

      HPPO_REAL("pilot.lateral_kp", pilot.lateral.k_p),
      HPPO_REAL("pilot.lateral_kv", pilot.lateral.k_v),
      HPPO_REAL("pilot.lateral_ka", pilot.lateral.k_a),
      HPPO_REAL("pilot.longitudinal_kp", pilot.longitudinal.k_p),
      HPPO_REAL("pilot.longitudinal_kv", pilot.longitudinal.k_v),
      HPPO_REAL("pilot.longitudinal_ka", pilot.longitudinal.k_a),
      HPPO_REAL("pilot.waypoint_spacing", pilot.waypoint_spacing),
      HPPO_REAL("pilot.keep_lookahead", pilot.keep_lookahead),
      HPPO_REAL("pilot.change_span", pilot.change_span),
      HPPO_REAL("pilot.arrival_radius", pilot.arrival_radius),
      HPPO_REAL("pilot.pursuit_distance", pilot.pursuit_distance),
      HPPO_INT("pilot.max_steps", pilot.max_steps),

      HPPO_INT("grid.rows", grid.rows),
      HPPO_INT("grid.cols", grid.cols),
      HPPO_REAL("grid.cell_size", grid.cell_size),
      Field{"encoder.channels",
            [](RunConfig& c, const std::string& v) { c.encoder_channels = parse_list<int>("encoder.channels", v); },
            [](const RunConfig& c) { return fmt_list(c.encoder_channels); }},

      Field{"run.seeds",
            [](RunConfig& c, const std::string& v) { c.run.seeds = parse_list<std::uint64_t>("run.seeds", v); },
            [](const RunConfig& c) { return fmt_list(c.run.seeds); }},
      HPPO_INT("run.train_episodes", run.train_episodes),
      HPPO_INT("run.eval_episodes", run.eval_episodes),
      HPPO_INT("run.threads", run.threads),
      Field{"run.log_traces", [](RunConfig& c, const std::string& v) { c.run.log_traces = parse_bool("run.log_traces", v); },
            [](const RunConfig& c) { return std::string(c.run.log_traces ? "true" : "false"); }},
      Field{"run.predictor_checkpoint", [](RunConfig& c, const std::string& v) { c.run.predictor_checkpoint = v; },
            [](const RunConfig& c) { return c.run.predictor_checkpoint; }},
  };
  return table;
}

#undef HPPO_INT
#undef HPPO_REAL
#undef HPPO_KMH

}  // namespace

RunConfig::RunConfig() {
  pilot.target_speed = scenario.ego_target_speed;
  // Surrounding traffic starts between 22.5 and 24 km/h so gaps open and close.
  scenario.npc_speed_spread = 1.5 / 3.6;
  predictor_train.epochs = 4;
  predictor_train.prefix_mask_prob = 0.3;
  predictor_train.max_seconds = 240.0;
}

void RunConfig::validate() const {
  scenario.validate();
  agent.validate();
  predictor.validate();
  predictor_train.validate();
  pilot.validate();
  grid.validate();
  encoder().validate();
  if (collect.vehicles < 1 || collect.steps < 2 * forecast::kSteps || !(collect.rate_hz > 0.0)) {
    throw ConfigError("predictor.collect_* must give >= 1 vehicle, >= 20 steps and a positive rate");
  }
  if (run.seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (run.train_episodes < 0) throw ConfigError("run.train_episodes must be >= 0");
  if (run.eval_episodes < 1) throw ConfigError("run.eval_episodes must be >= 1");
  if (run.threads < 0) throw ConfigError("run.threads must be >= 0");
}

gridenc::EncoderConfig RunConfig::encoder() const {
  gridenc::EncoderConfig e;
  e.rows = grid.rows;
  e.cols = grid.cols;
  e.channels = encoder_channels;
  return e;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config(std::istream& is, const std::string& origin) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  for (int n = 1; std::getline(is, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(n) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      apply_setting(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in, path);
}

std::string format_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const Field& f : fields()) os << f.key << " = " << f.get(cfg) << '\n';
  return os.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.key);
  return out;
}

}  // namespace hppo::harness
