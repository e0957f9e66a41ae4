#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hppo/agent/agent.hpp"
#include "hppo/forecast/forecast.hpp"
#include "hppo/gridenc/gridenc.hpp"
#include "hppo/percept/percept.hpp"
#include "hppo/pilot/pilot.hpp"
#include "hppo/sim/types.hpp"

namespace hppo::harness {

struct CollectConfig {
  int vehicles = 20;
  int steps = 600;
  double rate_hz = 10.0;
};

struct RunSettings {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int train_episodes = 300;
  int eval_episodes = 100;
  int threads = 0;          ///< evaluation workers, 0 = hardware concurrency
  bool log_traces = false;  ///< embed per-tick maneuver traces in episode logs
  std::string predictor_checkpoint;  ///< empty = train one per master seed
};

/// Everything a run needs. Parsed from "section.key = value" lines.
struct RunConfig {
  sim::ScenarioConfig scenario;
  agent::AgentConfig agent;
  agent::Variant variant = agent::Variant::hybrid;
  forecast::PredictorConfig predictor;
  forecast::PredictorHyper predictor_train;
  CollectConfig collect;
  pilot::PilotConfig pilot;
  percept::GridSpec grid;
  std::vector<int> encoder_channels{8, 16, 16};
  RunSettings run;

  RunConfig();
  void validate() const;
  gridenc::EncoderConfig encoder() const;
};

/// Unknown keys, malformed values and duplicate keys are ConfigErrors that
/// name the origin and line.
RunConfig parse_config(std::istream& is, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its current value, one per line, in a fixed order. Parsing
/// the output reproduces the configuration.
std::string format_config(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace hppo::harness
