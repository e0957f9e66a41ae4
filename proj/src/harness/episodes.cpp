#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hppo/errors.hpp"
#include "hppo/harness/harness.hpp"
#include "hppo/sim/geometry.hpp"
#include "hppo/sim/world.hpp"

namespace hppo::harness {

using agent::Observation;
using nlohmann::json;

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * kFnvPrime;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t from_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

std::uint64_t train_episode_seed(std::uint64_t master, int episode) {
  return derive_seed(derive_seed(master, 0x7a1), static_cast<std::uint64_t>(episode));
}
std::uint64_t eval_episode_seed(std::uint64_t master, int episode) {
  return derive_seed(derive_seed(master, 0xe7a1), static_cast<std::uint64_t>(episode));
}
std::uint64_t agent_seed(std::uint64_t master) { return derive_seed(master, 0xa9e); }
std::uint64_t predictor_seed(std::uint64_t master) { return derive_seed(master, 0xf0c); }

std::uint64_t seed_stream_hash(const std::vector<std::uint64_t>& seeds) {
  std::uint64_t h = kFnvOffset;
  for (std::uint64_t s : seeds) fnv(h, &s, sizeof s);
  return h;
}

// ---------------------------------------------------------------- observation

agent::PredictionBlock predict_neighbors(const forecast::Predictor& predictor, const percept::HistoryBuffer& history,
                                         const sim::WorldState& world, const percept::SensorMatrix& sensors) {
  agent::PredictionBlock out{};
  std::vector<forecast::Track> tracks;
  std::vector<forecast::StepMask> masks;
  std::vector<int> rows;
  for (int i = 0; i < percept::kNeighbors; ++i) {
    const int id = sensors.ids[static_cast<std::size_t>(i)];
    if (id < 0) continue;
    const int slot = history.slot_of(id);
    if (slot < 0) continue;
    forecast::StepMask mask{};
    const std::vector<double> xy = history.track(slot, &mask);
    bool any = false;
    for (bool m : mask) any = any || m;
    if (!any) continue;
    forecast::Track t{};
    std::copy(xy.begin(), xy.end(), t.begin());
    tracks.push_back(t);
    masks.push_back(mask);
    rows.push_back(i);
  }
  if (tracks.empty()) return out;
  const std::vector<forecast::Track> future = predictor.predict_future(tracks, masks);
  const sim::VehicleState& ego = world.ego();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const sim::Vec2 world_pt{future[k][forecast::kFlat - 2], future[k][forecast::kFlat - 1]};
    const sim::Vec2 local = sim::to_local(world_pt, {ego.x, ego.y}, ego.heading);
    out[static_cast<std::size_t>(2 * rows[k])] = local.x;
    out[static_cast<std::size_t>(2 * rows[k] + 1)] = local.y;
  }
  return out;
}

ObservationBuilder::ObservationBuilder(agent::Variant variant, const forecast::Predictor* predictor,
                                       const percept::GridSpec& grid)
    : variant_(variant), predictor_(predictor), grid_(grid) {
  if (agent::uses_prediction(variant) && predictor == nullptr) {
    throw ConfigError("variant '" + agent::to_string(variant) + "' needs a trained predictor");
  }
}

void ObservationBuilder::reset(const sim::WorldState& world) {
  history_.clear();
  tick(world);
}

void ObservationBuilder::tick(const sim::WorldState& world) {
  if (agent::uses_prediction(variant_)) history_.push(world, percept::nearest_neighbors(world));
}

Observation ObservationBuilder::observe(const sim::WorldState& world) const {
  Observation obs;
  obs.sensors = percept::sensor_rows(world, percept::nearest_neighbors(world));
  if (agent::uses_prediction(variant_)) obs.prediction = predict_neighbors(*predictor_, history_, world, obs.sensors);
  if (agent::uses_grid(variant_)) obs.grid = percept::render_semantic_grid(world, grid_);
  return obs;
}

std::uint64_t observation_hash(const Observation& obs) {
  std::uint64_t h = kFnvOffset;
  fnv(h, obs.prediction.data(), sizeof(double) * obs.prediction.size());
  for (const auto& row : obs.sensors.rows) fnv(h, row.data(), sizeof(double) * row.size());
  if (!obs.grid.cells.empty()) fnv(h, obs.grid.cells.data(), obs.grid.cells.size());
  return h;
}

// ---------------------------------------------------------------- episodes

EpisodeLog run_episode(const RunConfig& cfg, agent::Variant variant, const forecast::Predictor* predictor,
                       std::uint64_t seed, int episode, const PolicyFn& policy, const DecisionSink& sink) {
  sim::WorldState world = sim::reset(cfg.scenario, seed);
  ObservationBuilder builder(variant, predictor, cfg.grid);
  builder.reset(world);
  EpisodeLog log;
  log.episode = episode;
  log.seed = seed;
  const double x0 = world.ego().x;
  Observation obs = builder.observe(world);
  const pilot::TickObserver tick = [&](const sim::WorldState& w, const sim::StepEvents&) { builder.tick(w); };
  while (!sim::is_terminal(world.status)) {
    const agent::Agent::Act act = policy(obs);
    pilot::ManeuverResult m =
        pilot::execute_decision(world, static_cast<pilot::Decision>(act.sample.action), cfg.pilot, tick, cfg.run.log_traces);
    DecisionRecord rec;
    rec.state_hash = observation_hash(obs);
    rec.action = act.sample.action;
    rec.probs = act.output.probs;
    rec.reward = m.reward;
    rec.steps = m.steps;
    log.decisions.push_back(rec);
    log.cumulative_reward += m.reward.total;
    log.steps += m.steps;
    const bool done = sim::is_terminal(world.status);
    Observation next = (!done || sink) ? builder.observe(world) : Observation{};
    if (sink) sink(obs, act, m, next, done);
    if (cfg.run.log_traces) log.trace.insert(log.trace.end(), m.trace.begin(), m.trace.end());
    obs = std::move(next);
  }
  log.status = world.status;
  log.distance = world.ego().x - x0;
  return log;
}

double replay_cumulative_reward(const RunConfig& cfg, const EpisodeLog& log) {
  sim::WorldState world = sim::reset(cfg.scenario, log.seed);
  double total = 0.0;
  for (const DecisionRecord& d : log.decisions) {
    if (sim::is_terminal(world.status)) throw ContractError("replay: episode ended before its logged actions ran out");
    const pilot::ManeuverResult m =
        pilot::execute_decision(world, static_cast<pilot::Decision>(d.action), cfg.pilot, {}, false);
    total += m.reward.total;
  }
  return total;
}

// ---------------------------------------------------------------- logs

json to_json(const EpisodeLog& log) {
  json decisions = json::array();
  for (const DecisionRecord& d : log.decisions) {
    decisions.push_back({{"state_hash", hex(d.state_hash)},
                         {"action", std::string(pilot::to_string(static_cast<pilot::Decision>(d.action)))},
                         {"probs", d.probs},
                         {"reward",
                          {{"collide", d.reward.r_collide},
                           {"out_road", d.reward.r_out_road},
                           {"go_forward", d.reward.r_go_forward},
                           {"success", d.reward.r_success},
                           {"total", d.reward.total}}},
                         {"steps", d.steps}});
  }
  json j = {{"episode", log.episode},
            {"seed", log.seed},
            {"status", std::string(sim::to_string(log.status))},
            {"cumulative_reward", log.cumulative_reward},
            {"steps", log.steps},
            {"distance", log.distance},
            {"decisions", std::move(decisions)}};
  if (!log.trace.empty()) {
    json trace = json::array();
    for (const pilot::TraceTick& t : log.trace) {
      trace.push_back({t.time_step, t.x, t.y, t.heading, t.speed, t.command.throttle, t.command.brake,
                       t.command.steer, t.reward});
    }
    j["trace"] = std::move(trace);
    j["trace_fields"] = {"t", "x", "y", "heading", "speed", "throttle", "brake", "steer", "reward"};
  }
  return j;
}

EpisodeLog episode_from_json(const json& j) {
  EpisodeLog log;
  log.episode = j.at("episode").get<int>();
  log.seed = j.at("seed").get<std::uint64_t>();
  log.status = sim::status_from_string(j.at("status").get<std::string>());
  log.cumulative_reward = j.at("cumulative_reward").get<double>();
  log.steps = j.at("steps").get<int>();
  log.distance = j.at("distance").get<double>();
  for (const json& d : j.at("decisions")) {
    DecisionRecord r;
    r.state_hash = from_hex(d.at("state_hash").get<std::string>());
    const std::string a = d.at("action").get<std::string>();
    if (a.size() != 2 || a[0] != 'a' || a[1] < '0' || a[1] > '2') throw IoError("bad action '" + a + "' in episode log");
    r.action = a[1] - '0';
    r.probs = d.at("probs").get<std::array<double, agent::kActions>>();
    const json& w = d.at("reward");
    r.reward.r_collide = w.at("collide").get<double>();
    r.reward.r_out_road = w.at("out_road").get<double>();
    r.reward.r_go_forward = w.at("go_forward").get<double>();
    r.reward.r_success = w.at("success").get<double>();
    r.reward.total = w.at("total").get<double>();
    r.steps = d.at("steps").get<int>();
    log.decisions.push_back(r);
  }
  if (j.contains("trace")) {
    for (const json& t : j.at("trace")) {
      pilot::TraceTick k;
      k.time_step = t.at(0).get<int>();
      k.x = t.at(1).get<double>();
      k.y = t.at(2).get<double>();
      k.heading = t.at(3).get<double>();
      k.speed = t.at(4).get<double>();
      k.command = {t.at(5).get<double>(), t.at(6).get<double>(), t.at(7).get<double>()};
      k.reward = t.at(8).get<double>();
      log.trace.push_back(k);
    }
  }
  return log;
}

void write_episode_log(const std::string& path, const LogHeader& header, const std::vector<EpisodeLog>& logs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write episode log '" + path + "'");
  const json h = {{"schema", "hppo-episodes"},
                  {"version", kLogSchemaVersion},
                  {"mode", header.mode},
                  {"variant", agent::to_string(header.variant)},
                  {"master_seed", header.master_seed},
                  {"seed_hash", hex(header.seed_hash)},
                  {"episodes", header.episodes}};
  out << h.dump() << '\n';
  for (const EpisodeLog& log : logs) out << to_json(log).dump() << '\n';
  if (!out) throw IoError("failed writing episode log '" + path + "'");
}

std::pair<LogHeader, std::vector<EpisodeLog>> read_episode_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open episode log '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty episode log");
  std::pair<LogHeader, std::vector<EpisodeLog>> out;
  try {
    const json h = json::parse(line);
    if (h.at("schema") != "hppo-episodes") throw IoError(path + ": not an episode log");
    if (h.at("version").get<int>() != kLogSchemaVersion) throw IoError(path + ": unsupported log version");
    out.first.mode = h.at("mode").get<std::string>();
    out.first.variant = agent::parse_variant(h.at("variant").get<std::string>());
    out.first.master_seed = h.at("master_seed").get<std::uint64_t>();
    out.first.seed_hash = from_hex(h.at("seed_hash").get<std::string>());
    out.first.episodes = h.at("episodes").get<int>();
    for (int n = 2; std::getline(in, line); ++n) {
      if (line.empty()) continue;
      out.second.push_back(episode_from_json(json::parse(line)));
    }
  } catch (const json::exception& e) {
    throw IoError(path + ": malformed episode log (" + e.what() + ")");
  }
  return out;
}

// ---------------------------------------------------------------- metrics

double MetricsRow::success_rate() const { return episodes ? static_cast<double>(successes) / episodes : 0.0; }
double MetricsRow::collision_rate() const {
  return episodes ? static_cast<double>(collisions + off_road) / episodes : 0.0;
}
double MetricsRow::timeout_rate() const { return episodes ? static_cast<double>(timeouts) / episodes : 0.0; }

MetricsRow tally(agent::Variant variant, std::uint64_t seed, const std::vector<EpisodeLog>& logs) {
  MetricsRow r;
  r.variant = variant;
  r.seed = seed;
  r.episodes = static_cast<int>(logs.size());
  for (const EpisodeLog& l : logs) {
    switch (l.status) {
      case sim::EpisodeStatus::success: ++r.successes; break;
      case sim::EpisodeStatus::collision: ++r.collisions; break;
      case sim::EpisodeStatus::off_road_terminal: ++r.off_road; break;
      case sim::EpisodeStatus::timeout: ++r.timeouts; break;
      case sim::EpisodeStatus::running: throw ContractError("tally: episode log without a terminal status");
    }
    r.mean_reward += l.cumulative_reward;
    r.mean_distance += l.distance;
  }
  if (r.episodes > 0) {
    r.mean_reward /= r.episodes;
    r.mean_distance /= r.episodes;
  }
  return r;
}

std::string format_table_row(const MetricsRow& row) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << agent::display_name(row.variant) << ' ' << 100.0 * row.success_rate()
     << "% " << 100.0 * row.collision_rate() << "% " << 100.0 * row.timeout_rate() << '%';
  return os.str();
}

namespace {

constexpr const char* kMetricsHeader =
    "variant,seed,episodes,success_rate,collision_rate,timeout_rate,successes,collisions,off_road,timeouts,"
    "mean_reward,mean_distance";

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics '" + path + "'");
  out << kMetricsHeader << '\n' << std::setprecision(17);
  for (const MetricsRow& r : rows) {
    out << agent::to_string(r.variant) << ',' << r.seed << ',' << r.episodes << ',' << r.success_rate() << ','
        << r.collision_rate() << ',' << r.timeout_rate() << ',' << r.successes << ',' << r.collisions << ','
        << r.off_road << ',' << r.timeouts << ',' << r.mean_reward << ',' << r.mean_distance << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw IoError(path + ": unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
    if (f.size() != 12) throw IoError(path + ": expected 12 columns in '" + line + "'");
    MetricsRow r;
    r.variant = agent::parse_variant(f[0]);
    r.seed = std::stoull(f[1]);
    r.episodes = std::stoi(f[2]);
    r.successes = std::stoi(f[6]);
    r.collisions = std::stoi(f[7]);
    r.off_road = std::stoi(f[8]);
    r.timeouts = std::stoi(f[9]);
    r.mean_reward = std::stod(f[10]);
    r.mean_distance = std::stod(f[11]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace hppo::harness
