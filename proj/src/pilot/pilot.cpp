#include "hppo/pilot/pilot.hpp"

#include <algorithm>
#include <cmath>

#include "hppo/errors.hpp"
#include "hppo/sim/world.hpp"

namespace hppo::pilot {

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::right: return "a0";
    case Decision::keep: return "a1";
    case Decision::left: return "a2";
  }
  return "a1";
}

void PidGains::validate() const {
  if (!(dt > 0.0)) throw ConfigError("PID dt must be positive");
}

void PilotConfig::validate() const {
  lateral.validate();
  longitudinal.validate();
  if (!(target_speed > 0.0)) throw ConfigError("pilot target_speed must be positive");
  if (!(waypoint_spacing > 0.0) || !(keep_lookahead > 0.0) || !(change_span > 0.0)) {
    throw ConfigError("pilot spacing and spans must be positive");
  }
  if (!(arrival_radius > 0.0) || !(pursuit_distance > 0.0)) throw ConfigError("pilot radii must be positive");
  if (max_steps < 1) throw ConfigError("pilot max_steps must be >= 1");
}

double ManeuverPlan::y_at(double x) const {
  if (waypoints.empty()) return 0.0;
  if (x <= waypoints.front().x) return waypoints.front().y;
  if (x >= waypoints.back().x) return waypoints.back().y;
  const auto it = std::upper_bound(waypoints.begin(), waypoints.end(), x,
                                   [](double v, const sim::Vec2& p) { return v < p.x; });
  const sim::Vec2& b = *it;
  const sim::Vec2& a = *(it - 1);
  return a.y + (b.y - a.y) * (x - a.x) / (b.x - a.x);
}

ManeuverPlan plan_lane_change(const sim::VehicleState& pose, Decision decision, const sim::LaneSpec& lanes,
                              const PilotConfig& cfg) {
  ManeuverPlan plan;
  plan.decision = decision;
  plan.target_speed = cfg.target_speed;
  plan.arrival_radius = cfg.arrival_radius;
  const int lane = lanes.lane_of(pose.y);
  plan.target_lane = lane + static_cast<int>(decision) - 1;
  const double y1 = lanes.lane_center(plan.target_lane);
  plan.waypoints.push_back({pose.x, pose.y});

  if (decision == Decision::keep) {
    for (double s = cfg.waypoint_spacing; s <= cfg.keep_lookahead + 1e-9; s += cfg.waypoint_spacing) {
      plan.waypoints.push_back({pose.x + s, y1});
    }
    return plan;
  }
  // Quintic with zero lateral velocity and acceleration at both ends.
  const double y0 = pose.y, span = cfg.change_span;
  auto profile = [&](double s) {
    const double t = s / span;
    return y0 + (y1 - y0) * t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
  };
  for (double s = cfg.waypoint_spacing; s < span - 1e-9; s += cfg.waypoint_spacing) {
    plan.waypoints.push_back({pose.x + s, profile(s)});
  }
  plan.waypoints.push_back({pose.x + span, y1});
  return plan;
}

double pid_lateral(PidState& state, const PidGains& gains, const sim::VehicleState& pose, sim::Vec2 target,
                   double integral_limit) {
  const double e = sim::wrap_angle(std::atan2(target.y - pose.y, target.x - pose.x) - pose.heading);
  state.integral = std::clamp(state.integral + e * gains.dt, -integral_limit, integral_limit);
  const double d = (e - state.prev_error) / gains.dt;
  state.prev_error = e;
  return std::clamp(gains.k_p * e + gains.k_v * d + gains.k_a * state.integral, -1.0, 1.0);
}

std::pair<double, double> pid_longitudinal(PidState& state, const PidGains& gains, double speed, double target_speed,
                                           double integral_limit) {
  const double e = target_speed - speed;
  const double d = (e - state.prev_error) / gains.dt;
  state.prev_error = e;
  const double base = gains.k_p * e + gains.k_v * d;
  const double trial = std::clamp(state.integral + e * gains.dt, -integral_limit, integral_limit);
  const double raw_trial = base + gains.k_a * trial;
  // Conditional integration: hold the integral while saturated in the
  // direction the error is pushing.
  const bool saturated = (raw_trial > 1.0 && e > 0.0) || (raw_trial < -1.0 && e < 0.0);
  if (!saturated) state.integral = trial;
  const double raw = base + gains.k_a * state.integral;
  if (raw >= 0.0) return {std::min(raw, 1.0), 0.0};
  return {0.0, std::min(-raw, 1.0)};
}

Tracker::Tracker(ManeuverPlan plan, const PilotConfig& cfg) : plan_(std::move(plan)), cfg_(cfg) {}

sim::ControlCommand Tracker::command(const sim::VehicleState& ego) {
  const double tx = ego.x + cfg_.pursuit_distance;
  const double steer = pid_lateral(lat_, cfg_.lateral, ego, {tx, plan_.y_at(tx)}, cfg_.integral_limit);
  const auto [throttle, brake] =
      pid_longitudinal(lon_, cfg_.longitudinal, ego.speed, plan_.target_speed, cfg_.integral_limit);
  return {throttle, brake, steer};
}

bool Tracker::arrived(const sim::VehicleState& ego) const {
  const sim::Vec2& end = plan_.waypoints.back();
  return std::hypot(ego.x - end.x, ego.y - end.y) <= plan_.arrival_radius || ego.x >= end.x;
}

ManeuverResult execute_decision(sim::WorldState& world, Decision decision, const PilotConfig& cfg,
                                const TickObserver& observer, bool record_trace) {
  if (sim::is_terminal(world.status)) throw ContractError("execute_decision on a terminal world");
  Tracker tracker(plan_lane_change(world.ego(), decision, world.lanes, cfg), cfg);
  ManeuverResult out;
  while (out.steps < cfg.max_steps) {
    const sim::ControlCommand cmd = tracker.command(world.ego());
    const sim::WorldState prev_world = world;
    const sim::StepEvents ev = sim::step(world, cmd);
    const sim::RewardBreakdown r = sim::compute_reward(prev_world, world, ev);
    out.reward += r;
    ++out.steps;
    if (record_trace) {
      const sim::VehicleState& e = world.ego();
      out.trace.push_back({world.time_step, e.x, e.y, e.heading, e.speed, cmd, r.total});
    }
    if (observer) observer(world, ev);
    if (sim::is_terminal(world.status)) break;
    if (tracker.arrived(world.ego())) {
      out.arrived = true;
      break;
    }
  }
  return out;
}

}  // namespace hppo::pilot
