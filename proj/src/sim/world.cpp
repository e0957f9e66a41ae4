#include "hppo/sim/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hppo/errors.hpp"

namespace hppo::sim {
namespace {

// Same-lane bumper gap required at spawn, in vehicle lengths.
constexpr double kSpawnGapLengths = 2.0;

// Lane keeping for surrounding vehicles.
constexpr double kNpcLateralGain = 0.15;  // steer per meter of lateral error
constexpr double kNpcHeadingGain = 0.8;   // steer per radian of heading error

}  // namespace

WorldState reset(const ScenarioConfig& scenario, std::uint64_t seed) {
  scenario.validate();
  WorldState w;
  w.scenario = scenario;
  w.dt = scenario.dt;
  w.lanes = scenario.lanes;
  w.rng.seed(seed);
  w.ego_id = 0;

  const VehicleLimits& lim = scenario.vehicle;
  VehicleState ego;
  ego.id = 0;
  ego.x = 0.0;
  ego.y = scenario.lanes.lane_center(scenario.ego_start_lane);
  ego.length = lim.length;
  ego.width = lim.width;
  ego.is_ego = true;
  w.vehicles.push_back(ego);

  const double min_center_gap = lim.length + kSpawnGapLengths * lim.length;
  const double hi = std::min(scenario.npc_spawn_max, scenario.lanes.road_length);
  const int max_attempts = 1000 * std::max(1, scenario.npc_count);
  int attempts = 0;
  while (static_cast<int>(w.vehicles.size()) < scenario.npc_count + 1) {
    if (++attempts > max_attempts) {
      throw PlacementError("could not place " + std::to_string(scenario.npc_count) +
                           " surrounding vehicles without violating the spawn gap; lower npc_count or widen "
                           "the spawn range");
    }
    const int lane = uniform_index(w.rng, scenario.lanes.lane_count);
    const double x = uniform(w.rng, scenario.npc_spawn_min, hi);
    const double y = scenario.lanes.lane_center(lane);
    bool ok = true;
    for (const VehicleState& o : w.vehicles) {
      if (std::abs(o.y - y) < 1e-9 && std::abs(o.x - x) < min_center_gap) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    VehicleState v;
    v.id = static_cast<int>(w.vehicles.size());
    v.x = x;
    v.y = y;
    v.speed = scenario.cycle_speed - scenario.npc_speed_spread * uniform01(w.rng);
    v.length = lim.length;
    v.width = lim.width;
    w.vehicles.push_back(v);
  }
  w.status = EpisodeStatus::running;
  return w;
}

ControlCommand surrounding_policy(const WorldState& world, int id) {
  const VehicleState* self = world.find(id);
  if (!self || self->is_ego) throw ContractError("surrounding_policy needs a non-ego vehicle id");
  const ScenarioConfig& sc = world.scenario;
  const IdmParams& idm = sc.idm;

  // Nearest vehicle ahead whose footprint overlaps laterally.
  const VehicleState* leader = nullptr;
  double best_dx = std::numeric_limits<double>::infinity();
  for (const VehicleState& o : world.vehicles) {
    if (o.id == id) continue;
    const double dx = o.x - self->x;
    if (dx <= 0.0) continue;
    if (std::abs(o.y - self->y) >= 0.5 * (o.width + self->width)) continue;
    if (dx < best_dx) {
      best_dx = dx;
      leader = &o;
    }
  }

  const double v = self->speed;
  const double v0 = sc.cycle_speed;
  double accel = idm.max_accel * (1.0 - std::pow(v / v0, idm.exponent));
  if (leader) {
    const double gap = std::max(best_dx - 0.5 * (self->length + leader->length), 0.1);
    const double dv = v - leader->speed;
    const double s_star =
        idm.min_gap + std::max(0.0, v * idm.time_headway + v * dv / (2.0 * std::sqrt(idm.max_accel * idm.comfortable_decel)));
    accel -= idm.max_accel * (s_star / gap) * (s_star / gap);
  }

  ControlCommand cmd;
  if (accel >= 0.0) {
    cmd.throttle = std::min(1.0, accel / sc.vehicle.max_accel);
  } else {
    cmd.brake = std::min(1.0, -accel / sc.vehicle.max_brake);
  }
  const double lane_y = world.lanes.lane_center(world.lanes.lane_of(self->y));
  cmd.steer = std::clamp(kNpcLateralGain * (lane_y - self->y) - kNpcHeadingGain * self->heading, -1.0, 1.0);
  return cmd;
}

void integrate_vehicle(VehicleState& v, const ControlCommand& raw, const VehicleLimits& lim, double dt) {
  const ControlCommand cmd = raw.sanitized();
  const double accel = cmd.throttle * lim.max_accel - cmd.brake * lim.max_brake;
  double v1 = v.speed + accel * dt;
  double dist = 0.0;
  if (v1 < 0.0) {
    // Stops inside the step.
    const double t_stop = accel < 0.0 ? v.speed / -accel : 0.0;
    dist = 0.5 * v.speed * t_stop;
    v1 = 0.0;
  } else {
    dist = 0.5 * (v.speed + v1) * dt;
  }
  const double dpsi = dist / lim.wheelbase * std::tan(cmd.steer * lim.max_steer);
  const double mid = v.heading + 0.5 * dpsi;
  v.x += dist * std::cos(mid);
  v.y += dist * std::sin(mid);
  v.heading = wrap_angle(v.heading + dpsi);
  v.speed = v1;
}

bool any_corner_off_road(const VehicleState& v, const LaneSpec& lanes) {
  for (const Vec2& c : OrientedRect::of(v).corners()) {
    if (!lanes.on_road(c.y)) return true;
  }
  return false;
}

std::vector<std::pair<int, int>> detect_collision(const WorldState& world) {
  std::vector<std::pair<int, int>> out;
  const auto& vs = world.vehicles;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const OrientedRect a = OrientedRect::of(vs[i]);
    for (std::size_t j = i + 1; j < vs.size(); ++j) {
      // Cheap reject before the separating-axis test.
      const double reach = 0.5 * (std::hypot(vs[i].length, vs[i].width) + std::hypot(vs[j].length, vs[j].width));
      if (std::abs(vs[i].x - vs[j].x) > reach || std::abs(vs[i].y - vs[j].y) > reach) continue;
      if (overlaps(a, OrientedRect::of(vs[j]))) {
        out.emplace_back(std::min(vs[i].id, vs[j].id), std::max(vs[i].id, vs[j].id));
      }
    }
  }
  return out;
}

EpisodeStatus episode_status(const WorldState& world, int max_steps) {
  if (is_terminal(world.status)) return world.status;
  const VehicleState& ego = world.ego();
  for (const auto& [a, b] : detect_collision(world)) {
    if (a == world.ego_id || b == world.ego_id) return EpisodeStatus::collision;
  }
  if (!world.lanes.on_road(ego.y)) return EpisodeStatus::off_road_terminal;
  if (ego.x >= world.lanes.road_length) return EpisodeStatus::success;
  if (world.time_step >= max_steps) return EpisodeStatus::timeout;
  return EpisodeStatus::running;
}

StepEvents step(WorldState& world, const ControlCommand& ego_cmd) {
  if (is_terminal(world.status)) {
    throw ContractError("step() on a terminal world (status " + std::string(to_string(world.status)) + ")");
  }
  std::vector<ControlCommand> cmds(world.vehicles.size());
  for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
    const VehicleState& v = world.vehicles[i];
    cmds[i] = v.is_ego ? ego_cmd : surrounding_policy(world, v.id);
  }
  for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
    integrate_vehicle(world.vehicles[i], cmds[i], world.scenario.vehicle, world.dt);
  }
  world.time_step += 1;

  StepEvents ev;
  for (const auto& pair : detect_collision(world)) {
    if (pair.first == world.ego_id || pair.second == world.ego_id) ev.colliding_pairs.push_back(pair);
  }
  ev.collision = !ev.colliding_pairs.empty();
  const VehicleState& ego = world.ego();
  ev.off_road = any_corner_off_road(ego, world.lanes);
  for (std::size_t k = 0; k < kMilestoneFractions.size(); ++k) {
    if (!world.milestone_flags[k] && ego.x >= kMilestoneFractions[k] * world.lanes.road_length) {
      world.milestone_flags[k] = true;
      ev.milestone[k] = true;
    }
  }
  ev.destination = ev.milestone[3];
  world.status = episode_status(world, world.scenario.max_episode_steps);
  ev.timeout = world.status == EpisodeStatus::timeout;
  return ev;
}

RewardBreakdown compute_reward(const WorldState& prev, const WorldState& next, const StepEvents& events) {
  RewardBreakdown r;
  r.r_collide = events.collision ? kCollisionPenalty : 0.0;
  r.r_out_road = events.off_road ? kOutOfRoadPenalty : 0.0;
  r.r_go_forward = next.ego().x - prev.ego().x;
  for (std::size_t k = 0; k < kMilestoneBonus.size(); ++k) {
    if (events.milestone[k]) r.r_success += kMilestoneBonus[k];
  }
  r.total = r.r_collide + r.r_out_road + r.r_go_forward + r.r_success;
  return r;
}

nlohmann::json to_json(const VehicleState& v) {
  return {{"id", v.id}, {"x", v.x}, {"y", v.y}, {"heading", v.heading}, {"speed", v.speed}, {"ego", v.is_ego}};
}

nlohmann::json to_json(const WorldState& world) {
  nlohmann::json vs = nlohmann::json::array();
  for (const VehicleState& v : world.vehicles) vs.push_back(to_json(v));
  return {{"time_step", world.time_step},
          {"status", std::string(to_string(world.status))},
          {"milestones", world.milestone_flags},
          {"vehicles", std::move(vs)}};
}

}  // namespace hppo::sim
