#include "hppo/sim/types.hpp"

#include <algorithm>
#include <cmath>

#include "hppo/errors.hpp"

namespace hppo::sim {

int LaneSpec::lane_of(double y) const {
  const int lane = static_cast<int>(std::floor(y / lane_width));
  return std::clamp(lane, 0, lane_count - 1);
}

void LaneSpec::validate(double vehicle_width) const {
  if (lane_count < 2) throw ConfigError("lane_count must be >= 2");
  if (!(lane_width > vehicle_width)) throw ConfigError("lane_width must exceed the vehicle width");
  if (!(road_length > 0.0)) throw ConfigError("road_length must be positive");
}

ControlCommand ControlCommand::sanitized() const {
  ControlCommand c;
  c.throttle = std::clamp(std::isfinite(throttle) ? throttle : 0.0, 0.0, 1.0);
  c.brake = std::clamp(std::isfinite(brake) ? brake : 0.0, 0.0, 1.0);
  c.steer = std::clamp(std::isfinite(steer) ? steer : 0.0, -1.0, 1.0);
  if (c.brake > 0.0) c.throttle = 0.0;
  return c;
}

std::string_view to_string(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::running: return "running";
    case EpisodeStatus::success: return "success";
    case EpisodeStatus::collision: return "collision";
    case EpisodeStatus::off_road_terminal: return "off_road_terminal";
    case EpisodeStatus::timeout: return "timeout";
  }
  return "running";
}

EpisodeStatus status_from_string(std::string_view s) {
  for (auto st : {EpisodeStatus::running, EpisodeStatus::success, EpisodeStatus::collision,
                  EpisodeStatus::off_road_terminal, EpisodeStatus::timeout}) {
    if (to_string(st) == s) return st;
  }
  throw ConfigError("unknown episode status '" + std::string(s) + "'");
}

void ScenarioConfig::validate() const {
  lanes.validate(vehicle.width);
  if (npc_count < 0) throw ConfigError("npc_count must be >= 0");
  if (!(cycle_speed > 0.0) || !(ego_target_speed > 0.0)) throw ConfigError("speeds must be positive");
  if (max_episode_steps < 1) throw ConfigError("max_episode_steps must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  if (ego_start_lane < 0 || ego_start_lane >= lanes.lane_count) {
    throw ConfigError("ego_start_lane outside the road");
  }
  if (!(npc_spawn_max > npc_spawn_min) || npc_spawn_min < 0.0) {
    throw ConfigError("npc spawn range must satisfy 0 <= min < max");
  }
  if (npc_speed_spread < 0.0 || npc_speed_spread > cycle_speed) {
    throw ConfigError("npc_speed_spread must lie in [0, cycle_speed]");
  }
}

RewardBreakdown& RewardBreakdown::operator+=(const RewardBreakdown& o) {
  r_collide += o.r_collide;
  r_out_road += o.r_out_road;
  r_go_forward += o.r_go_forward;
  r_success += o.r_success;
  total += o.total;
  return *this;
}

std::vector<std::string> StepEvents::names() const {
  std::vector<std::string> out;
  if (collision) out.emplace_back("collision");
  if (off_road) out.emplace_back("off_road");
  for (int k = 0; k < 3; ++k) {
    if (milestone[static_cast<std::size_t>(k)]) out.push_back("milestone_" + std::to_string(k + 1));
  }
  if (destination) out.emplace_back("destination");
  if (timeout) out.emplace_back("timeout");
  return out;
}

const VehicleState& WorldState::ego() const {
  const VehicleState* v = find(ego_id);
  if (!v) throw ContractError("world has no ego vehicle");
  return *v;
}

VehicleState& WorldState::ego() { return const_cast<VehicleState&>(std::as_const(*this).ego()); }

const VehicleState* WorldState::find(int id) const {
  for (const VehicleState& v : vehicles) {
    if (v.id == id) return &v;
  }
  return nullptr;
}

bool WorldState::operator==(const WorldState& o) const {
  return time_step == o.time_step && dt == o.dt && vehicles == o.vehicles && ego_id == o.ego_id &&
         lanes == o.lanes && milestone_flags == o.milestone_flags && rng == o.rng && status == o.status &&
         scenario == o.scenario;
}

}  // namespace hppo::sim
