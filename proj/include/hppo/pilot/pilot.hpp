#pragma once

#include <functional>
#include <string_view>
#include <utility>
#include <vector>

#include "hppo/sim/geometry.hpp"
#include "hppo/sim/types.hpp"

namespace hppo::pilot {

/// Lane-change decisions. Lanes are numbered from the right, so a0 moves
/// to a lower lane index and a2 to a higher one.
enum class Decision : int { right = 0, keep = 1, left = 2 };
inline constexpr int kDecisions = 3;

std::string_view to_string(Decision d);

/// k_p, k_v, k_a act as proportional, derivative and integral gains.
struct PidGains {
  double k_p = 0.0;
  double k_v = 0.0;
  double k_a = 0.0;
  double dt = 0.1;

  void validate() const;
  bool operator==(const PidGains&) const = default;
};

inline constexpr PidGains kLateralGains{1.95, 0.2, 0.07, 0.1};
inline constexpr PidGains kLongitudinalGains{1.0, 0.0, 0.75, 0.1};

struct PidState {
  double integral = 0.0;
  double prev_error = 0.0;
};

struct PilotConfig {
  PidGains lateral = kLateralGains;
  PidGains longitudinal = kLongitudinalGains;
  double target_speed = 30.0 / 3.6;  ///< m/s
  double waypoint_spacing = 2.0;     ///< m
  double keep_lookahead = 20.0;      ///< plan length for a keep decision, m
  double change_span = 25.0;         ///< longitudinal length of a lane change, m
  double arrival_radius = 1.0;       ///< m
  double pursuit_distance = 6.0;     ///< target point ahead on the plan, m
  double integral_limit = 10.0;
  int max_steps = 100;

  void validate() const;
  bool operator==(const PilotConfig&) const = default;
};

struct ManeuverPlan {
  std::vector<sim::Vec2> waypoints;  ///< strictly increasing in x
  double target_speed = 0.0;
  double arrival_radius = 1.0;
  Decision decision = Decision::keep;
  int target_lane = 0;  ///< may lie outside the road

  /// Plan lateral position at longitudinal position x (piecewise linear,
  /// flat beyond either end).
  double y_at(double x) const;
};

ManeuverPlan plan_lane_change(const sim::VehicleState& pose, Decision decision, const sim::LaneSpec& lanes,
                              const PilotConfig& cfg = {});

/// Steer from the heading error toward `target`. Updates `state`.
double pid_lateral(PidState& state, const PidGains& gains, const sim::VehicleState& pose, sim::Vec2 target,
                   double integral_limit = 10.0);

/// (throttle, brake) from the speed error. The integral only accumulates
/// while the output is unsaturated or the error drives it back into range.
std::pair<double, double> pid_longitudinal(PidState& state, const PidGains& gains, double speed, double target_speed,
                                           double integral_limit = 10.0);

/// Tracks a plan and turns it into one low-level command per tick.
class Tracker {
 public:
  Tracker(ManeuverPlan plan, const PilotConfig& cfg);

  sim::ControlCommand command(const sim::VehicleState& ego);
  bool arrived(const sim::VehicleState& ego) const;
  const ManeuverPlan& plan() const { return plan_; }
  const PidState& lateral_state() const { return lat_; }
  const PidState& longitudinal_state() const { return lon_; }

 private:
  ManeuverPlan plan_;
  PilotConfig cfg_;
  PidState lat_;
  PidState lon_;
};

struct TraceTick {
  int time_step = 0;
  double x = 0.0, y = 0.0, heading = 0.0, speed = 0.0;
  sim::ControlCommand command;
  double reward = 0.0;
};

struct ManeuverResult {
  sim::RewardBreakdown reward;  ///< summed over the maneuver's ticks
  int steps = 0;
  std::vector<TraceTick> trace;
  bool arrived = false;
};

/// Called after every simulator tick with the world and that tick's events.
using TickObserver = std::function<void(const sim::WorldState&, const sim::StepEvents&)>;

/// Plans once, then steps the world until arrival, a terminal event, or the
/// step cap.
ManeuverResult execute_decision(sim::WorldState& world, Decision decision, const PilotConfig& cfg,
                                const TickObserver& observer = {}, bool record_trace = true);

}  // namespace hppo::pilot
