#pragma once

#include <array>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hppo/rng.hpp"

namespace hppo::sim {

inline constexpr double kPi = 3.14159265358979323846;

/// Straight multi-lane road. y = 0 is the right road edge, lanes are
/// numbered from the right starting at 0, +y points left.
struct LaneSpec {
  int lane_count = 4;
  double lane_width = 3.5;
  double road_length = 500.0;  ///< route distance to the destination

  double road_width() const { return lane_count * lane_width; }
  /// Center line of `lane`; lanes outside [0, lane_count) are allowed and
  /// lie off the road.
  double lane_center(int lane) const { return (lane + 0.5) * lane_width; }
  /// Lane containing lateral position `y`, clamped onto the road.
  int lane_of(double y) const;
  bool on_road(double y) const { return y >= 0.0 && y <= road_width(); }
  void validate(double vehicle_width) const;
  bool operator==(const LaneSpec&) const = default;
};

/// Shared footprint and actuation limits.
struct VehicleLimits {
  double length = 4.5;
  double width = 2.0;
  double wheelbase = 2.5;
  double max_accel = 3.0;                 ///< m/s^2 at full throttle
  double max_brake = 6.0;                 ///< m/s^2 at full brake
  double max_steer = 35.0 * kPi / 180.0;  ///< wheel angle at |steer| = 1

  bool operator==(const VehicleLimits&) const = default;
};

struct VehicleState {
  int id = 0;
  double x = 0.0;        ///< longitudinal, m
  double y = 0.0;        ///< lateral, m (0 at right road edge)
  double heading = 0.0;  ///< rad from the road axis, counter-clockwise
  double speed = 0.0;    ///< m/s, >= 0
  double length = 4.5;
  double width = 2.0;
  bool is_ego = false;

  bool operator==(const VehicleState&) const = default;
};

/// Low-level actuation. throttle and brake are never both positive.
struct ControlCommand {
  double throttle = 0.0;  ///< [0, 1]
  double brake = 0.0;     ///< [0, 1]
  double steer = 0.0;     ///< [-1, 1], positive turns left

  /// Clamps into range and resolves throttle/brake overlap in favor of brake.
  ControlCommand sanitized() const;
  bool operator==(const ControlCommand&) const = default;
};

enum class EpisodeStatus { running, success, collision, off_road_terminal, timeout };

std::string_view to_string(EpisodeStatus s);
EpisodeStatus status_from_string(std::string_view s);
inline bool is_terminal(EpisodeStatus s) { return s != EpisodeStatus::running; }

/// Intelligent Driver Model parameters for surrounding traffic.
struct IdmParams {
  double time_headway = 1.5;       ///< s
  double min_gap = 2.0;            ///< m
  double max_accel = 1.5;          ///< m/s^2
  double comfortable_decel = 2.0;  ///< m/s^2
  double exponent = 4.0;

  bool operator==(const IdmParams&) const = default;
};

struct ScenarioConfig {
  LaneSpec lanes;
  int npc_count = 12;
  double cycle_speed = 24.0 / 3.6;       ///< surrounding traffic, m/s
  double ego_target_speed = 30.0 / 3.6;  ///< m/s
  int max_episode_steps = 1200;
  double dt = 0.1;
  int ego_start_lane = 1;
  double npc_spawn_min = 20.0;   ///< m ahead of the ego start
  double npc_spawn_max = 250.0;  ///< m ahead of the ego start
  double npc_speed_spread = 0.0; ///< initial NPC speed uniform in [cycle - spread, cycle]
  IdmParams idm;
  VehicleLimits vehicle;

  void validate() const;
  bool operator==(const ScenarioConfig&) const = default;
};

struct RewardBreakdown {
  double r_collide = 0.0;
  double r_out_road = 0.0;
  double r_go_forward = 0.0;
  double r_success = 0.0;
  double total = 0.0;

  RewardBreakdown& operator+=(const RewardBreakdown& o);
};

inline constexpr std::array<double, 4> kMilestoneFractions = {0.25, 0.5, 0.75, 1.0};
inline constexpr std::array<double, 4> kMilestoneBonus = {100.0, 150.0, 200.0, 1000.0};
inline constexpr double kCollisionPenalty = -500.0;
inline constexpr double kOutOfRoadPenalty = -10.0;

/// Everything that happened during one simulator step.
struct StepEvents {
  bool collision = false;
  bool off_road = false;  ///< any ego corner outside the drivable area
  std::array<bool, 4> milestone{};  ///< first crossing of 25/50/75/100 % this step
  bool destination = false;
  bool timeout = false;
  std::vector<std::pair<int, int>> colliding_pairs;  ///< pairs involving the ego

  std::vector<std::string> names() const;
};

struct WorldState {
  int time_step = 0;
  double dt = 0.1;
  std::vector<VehicleState> vehicles;
  int ego_id = 0;
  LaneSpec lanes;
  std::array<bool, 4> milestone_flags{};
  Rng rng;
  EpisodeStatus status = EpisodeStatus::running;
  ScenarioConfig scenario;

  const VehicleState& ego() const;
  VehicleState& ego();
  const VehicleState* find(int id) const;

  bool operator==(const WorldState& o) const;
};

}  // namespace hppo::sim
