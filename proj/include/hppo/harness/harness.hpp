#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hppo/agent/agent.hpp"
#include "hppo/forecast/forecast.hpp"
#include "hppo/harness/config.hpp"
#include "hppo/percept/percept.hpp"
#include "hppo/pilot/pilot.hpp"
#include "hppo/sim/types.hpp"

namespace hppo::harness {

inline constexpr int kLogSchemaVersion = 1;

// Seed streams under one master seed.
std::uint64_t train_episode_seed(std::uint64_t master, int episode);
std::uint64_t eval_episode_seed(std::uint64_t master, int episode);
std::uint64_t agent_seed(std::uint64_t master);
std::uint64_t predictor_seed(std::uint64_t master);

/// FNV-1a over a seed sequence; equal hashes mean equal scenario streams.
std::uint64_t seed_stream_hash(const std::vector<std::uint64_t>& seeds);

// ---------------------------------------------------------------- observation

/// Ego-frame positions of the eight nearest neighbors ten steps ahead, in
/// sensor-row order. Rows without a neighbor or without history are zero.
agent::PredictionBlock predict_neighbors(const forecast::Predictor& predictor, const percept::HistoryBuffer& history,
                                         const sim::WorldState& world, const percept::SensorMatrix& sensors);

/// Keeps the position history current and builds observations carrying
/// only the blocks the variant uses.
class ObservationBuilder {
 public:
  ObservationBuilder(agent::Variant variant, const forecast::Predictor* predictor, const percept::GridSpec& grid);

  void reset(const sim::WorldState& world);
  void tick(const sim::WorldState& world);
  agent::Observation observe(const sim::WorldState& world) const;

 private:
  agent::Variant variant_;
  const forecast::Predictor* predictor_;
  percept::GridSpec grid_;
  percept::HistoryBuffer history_;
};

std::uint64_t observation_hash(const agent::Observation& obs);

// ---------------------------------------------------------------- episodes

struct DecisionRecord {
  std::uint64_t state_hash = 0;
  int action = 1;
  std::array<double, agent::kActions> probs{};
  sim::RewardBreakdown reward;
  int steps = 0;
};

struct EpisodeLog {
  int episode = 0;
  std::uint64_t seed = 0;
  std::vector<DecisionRecord> decisions;
  sim::EpisodeStatus status = sim::EpisodeStatus::running;
  double cumulative_reward = 0.0;  ///< sum of decision totals in order
  int steps = 0;
  double distance = 0.0;  ///< forward distance covered before the episode ended
  std::vector<pilot::TraceTick> trace;
};

nlohmann::json to_json(const EpisodeLog& log);
EpisodeLog episode_from_json(const nlohmann::json& j);

struct LogHeader {
  std::string mode;  ///< "train" or "eval"
  agent::Variant variant = agent::Variant::hybrid;
  std::uint64_t master_seed = 0;
  std::uint64_t seed_hash = 0;
  int episodes = 0;
};

void write_episode_log(const std::string& path, const LogHeader& header, const std::vector<EpisodeLog>& logs);
std::pair<LogHeader, std::vector<EpisodeLog>> read_episode_log(const std::string& path);

using PolicyFn = std::function<agent::Agent::Act(const agent::Observation&)>;
/// Receives (state, act, maneuver result, next state, done) after each decision.
using DecisionSink = std::function<void(const agent::Observation&, const agent::Agent::Act&, const pilot::ManeuverResult&,
                                        const agent::Observation&, bool)>;

EpisodeLog run_episode(const RunConfig& cfg, agent::Variant variant, const forecast::Predictor* predictor,
                       std::uint64_t seed, int episode, const PolicyFn& policy, const DecisionSink& sink = {});

/// Re-simulates a logged episode from its seed and action sequence and
/// returns the cumulative reward, summed in the logged order.
double replay_cumulative_reward(const RunConfig& cfg, const EpisodeLog& log);

// ---------------------------------------------------------------- metrics

struct MetricsRow {
  agent::Variant variant = agent::Variant::hybrid;
  std::uint64_t seed = 0;
  int episodes = 0;
  int successes = 0;
  int collisions = 0;
  int off_road = 0;
  int timeouts = 0;
  double mean_reward = 0.0;
  double mean_distance = 0.0;

  double success_rate() const;
  /// Collisions plus off-road terminals.
  double collision_rate() const;
  double timeout_rate() const;
};

MetricsRow tally(agent::Variant variant, std::uint64_t seed, const std::vector<EpisodeLog>& logs);
/// e.g. "Hybrid-PPO 87.8% 10.5% 2.7%".
std::string format_table_row(const MetricsRow& row);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// ---------------------------------------------------------------- protocols

struct UpdateRecord {
  std::int64_t update = 0;
  std::int64_t decision = 0;
  int episode = 0;
  agent::UpdateDiagnostics diag;
};

struct TrainResult {
  agent::ActorCritic policy;
  std::vector<EpisodeLog> episodes;
  std::vector<UpdateRecord> updates;
  std::int64_t decisions = 0;
  std::int64_t update_calls = 0;
};

using Progress = std::function<void(const std::string&)>;

/// The decision loop: observe, decide, execute, store, update every
/// `agent.update_period` decisions. Throws ConfigError when the variant
/// needs a predictor and none is given.
TrainResult train(const RunConfig& cfg, agent::Variant variant, std::uint64_t master_seed,
                  const forecast::Predictor* predictor, int episodes, const Progress& progress = {});

struct EvalResult {
  MetricsRow row;
  std::vector<EpisodeLog> episodes;
};

/// Episodes seeded from the eval stream of `master_seed`; results do not
/// depend on `threads`. Throws ConfigError when the policy does not match
/// the configured variant.
EvalResult evaluate(const agent::ActorCritic& policy, const RunConfig& cfg, std::uint64_t master_seed,
                    const forecast::Predictor* predictor, int episodes, bool greedy = true, int threads = 1);

/// Collects a trajectory dataset and trains a predictor for one master seed.
forecast::Predictor train_run_predictor(const RunConfig& cfg, std::uint64_t master_seed,
                                        forecast::TrainReport* report = nullptr);

void write_diagnostics_csv(const std::string& path, const std::vector<UpdateRecord>& updates);

/// Trains and evaluates every variant under every master seed, writing one
/// sub-directory per (variant, seed), metrics.csv, and the report.
std::vector<MetricsRow> ablate(const RunConfig& cfg, const std::string& out_dir, const Progress& progress = {});

/// Directory name for one run, e.g. "hybrid_seed3".
std::string run_dir_name(agent::Variant variant, std::uint64_t seed);

/// Renders reward and distance curves plus summary.txt from the logs under
/// `dir`. Output depends only on the logs, so reruns are byte-identical.
/// Throws IoError when the directory holds no episode logs.
void emit_report(const std::string& dir);

}  // namespace hppo::harness
