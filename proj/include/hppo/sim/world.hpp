#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "hppo/sim/geometry.hpp"
#include "hppo/sim/types.hpp"
#include "json.hpp"

namespace hppo::sim {

/// Fresh episode: ego at the route start in its start lane at rest, NPCs at
/// seeded lanes/positions with same-lane bumper gaps of at least two vehicle
/// lengths. Throws PlacementError when the density cannot be met.
WorldState reset(const ScenarioConfig& scenario, std::uint64_t seed);

/// IDM car-following toward the cycle speed plus lane-center keeping.
ControlCommand surrounding_policy(const WorldState& world, int id);

/// Advances every vehicle by one dt. Throws ContractError on terminal worlds.
StepEvents step(WorldState& world, const ControlCommand& ego_cmd);

/// All overlapping vehicle pairs (lower id first).
std::vector<std::pair<int, int>> detect_collision(const WorldState& world);

RewardBreakdown compute_reward(const WorldState& prev, const WorldState& next, const StepEvents& events);

EpisodeStatus episode_status(const WorldState& world, int max_steps);

/// Kinematic bicycle update over dt with constant acceleration.
void integrate_vehicle(VehicleState& v, const ControlCommand& cmd, const VehicleLimits& limits, double dt);

/// True when any footprint corner leaves [0, road_width] laterally.
bool any_corner_off_road(const VehicleState& v, const LaneSpec& lanes);

nlohmann::json to_json(const VehicleState& v);
nlohmann::json to_json(const WorldState& world);

}  // namespace hppo::sim
