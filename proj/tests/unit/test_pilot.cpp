#include <gtest/gtest.h>

#include <cmath>

#include "hppo/errors.hpp"
#include "hppo/pilot/pilot.hpp"
#include "hppo/sim/world.hpp"

using namespace hppo;
using namespace hppo::pilot;
using sim::WorldState;

namespace {

WorldState empty_road(int lane, double speed) {
  sim::ScenarioConfig sc;
  sc.npc_count = 0;
  sc.ego_start_lane = lane;
  sc.lanes.road_length = 5000.0;
  sc.max_episode_steps = 100000;
  WorldState w = sim::reset(sc, 1);
  w.ego().speed = speed;
  return w;
}

}  // namespace

TEST(Plan, KeepFollowsLaneCenter) {
  const sim::LaneSpec lanes;
  sim::VehicleState pose;
  pose.x = 12.0;
  pose.y = lanes.lane_center(2);
  const ManeuverPlan p = plan_lane_change(pose, Decision::keep, lanes);
  ASSERT_EQ(p.waypoints.size(), 11u);
  EXPECT_EQ(p.waypoints.front().x, 12.0);
  for (const auto& wp : p.waypoints) EXPECT_NEAR(wp.y, lanes.lane_center(2), 1e-9);
  EXPECT_NEAR(p.waypoints.back().x, 32.0, 1e-9);
}

TEST(Plan, LeftChangeEndsOnNextLaneCenter) {
  const sim::LaneSpec lanes;
  sim::VehicleState pose;
  pose.y = lanes.lane_center(2);
  const ManeuverPlan p = plan_lane_change(pose, Decision::left, lanes);
  EXPECT_NEAR(p.waypoints.back().y, lanes.lane_center(3), 1e-6);
  EXPECT_EQ(p.target_lane, 3);
  for (std::size_t i = 1; i < p.waypoints.size(); ++i) {
    EXPECT_GT(p.waypoints[i].x, p.waypoints[i - 1].x);
    EXPECT_GE(p.waypoints[i].y, p.waypoints[i - 1].y);
  }
  EXPECT_NEAR(p.waypoints.back().x, 25.0, 1e-12);
}

TEST(Plan, RightChangeFromLaneZeroTargetsOffRoad) {
  const sim::LaneSpec lanes;
  sim::VehicleState pose;
  pose.y = lanes.lane_center(0);
  const ManeuverPlan p = plan_lane_change(pose, Decision::right, lanes);
  EXPECT_LT(p.waypoints.back().y, 0.0);
  EXPECT_FALSE(lanes.on_road(p.waypoints.back().y));
}

TEST(Plan, YAtInterpolatesAndExtendsFlat) {
  ManeuverPlan p;
  p.waypoints = {{0, 0}, {2, 1}, {4, 1}};
  EXPECT_DOUBLE_EQ(p.y_at(1.0), 0.5);
  EXPECT_DOUBLE_EQ(p.y_at(-3.0), 0.0);
  EXPECT_DOUBLE_EQ(p.y_at(10.0), 1.0);
}

TEST(PidLateral, ZeroErrorGivesZeroSteer) {
  PidState s;
  sim::VehicleState pose;
  EXPECT_EQ(pid_lateral(s, kLateralGains, pose, {6.0, 0.0}), 0.0);
}

TEST(PidLateral, FirstTickMatchesFormula) {
  PidState s;
  sim::VehicleState pose;
  const double e = 0.1;
  const sim::Vec2 target{std::cos(e) * 6.0, std::sin(e) * 6.0};
  const PidGains g = kLateralGains;
  const double expected = g.k_p * e + g.k_v * (e / g.dt) + g.k_a * (e * g.dt);
  EXPECT_NEAR(pid_lateral(s, g, pose, target), expected, 1e-12);
}

TEST(PidLateral, OutputAlwaysBounded) {
  Rng rng(4);
  PidState s;
  for (int i = 0; i < 2000; ++i) {
    sim::VehicleState pose;
    pose.heading = uniform(rng, -3, 3);
    const double steer = pid_lateral(s, kLateralGains, pose, {uniform(rng, -50, 50), uniform(rng, -50, 50)});
    ASSERT_LE(std::abs(steer), 1.0);
    ASSERT_LE(std::abs(s.integral), 10.0);
  }
}

TEST(PidLongitudinal, SignsAndExclusivity) {
  PidState s;
  EXPECT_EQ(pid_longitudinal(s, kLongitudinalGains, 8.0, 8.0), std::make_pair(0.0, 0.0));
  PidState t;
  const auto [th, br] = pid_longitudinal(t, kLongitudinalGains, 0.0, 30.0 / 3.6);
  EXPECT_GT(th, 0.0);
  EXPECT_EQ(br, 0.0);
  PidState u;
  const auto [th2, br2] = pid_longitudinal(u, kLongitudinalGains, 12.0, 30.0 / 3.6);
  EXPECT_EQ(th2, 0.0);
  EXPECT_GT(br2, 0.0);
}

TEST(PidLongitudinal, ClosedLoopSettlesWithinTenSeconds) {
  WorldState w = empty_road(1, 0.0);
  PidState s;
  const double target = 30.0 / 3.6;
  double settled_at = -1.0;
  for (int k = 1; k <= 300; ++k) {
    const auto [th, br] = pid_longitudinal(s, kLongitudinalGains, w.ego().speed, target);
    ASSERT_EQ(th * br, 0.0);
    sim::step(w, {th, br, 0.0});
    if (std::abs(w.ego().speed - target) > 0.2) settled_at = -1.0;
    else if (settled_at < 0) settled_at = k * w.dt;
  }
  ASSERT_GT(settled_at, 0.0);
  EXPECT_LE(settled_at, 10.0);
}

TEST(Execute, KeepHoldsLaneCenter) {
  for (double v0 : {0.0, 4.0, 8.0}) {
    WorldState w = empty_road(2, v0);
    const double center = w.lanes.lane_center(2);
    int steps = 0;
    double worst = 0.0;
    while (steps < 200) {
      const ManeuverResult r = execute_decision(w, Decision::keep, {});
      for (const auto& t : r.trace) worst = std::max(worst, std::abs(t.y - center));
      steps += r.steps;
      ASSERT_FALSE(sim::is_terminal(w.status));
    }
    EXPECT_LE(worst, 0.2) << "v0 " << v0;
  }
}

TEST(Execute, LaneChangeSettlesWithoutOvershoot) {
  for (int lane = 0; lane < 4; ++lane) {
    for (Decision d : {Decision::right, Decision::left}) {
      const int target = lane + static_cast<int>(d) - 1;
      if (target < 0 || target > 3) continue;
      for (double v0 : {4.0, 6.0, 8.0}) {
        WorldState w = empty_road(lane, v0);
        const double y1 = w.lanes.lane_center(target);
        const double dir = target > lane ? 1.0 : -1.0;
        std::vector<double> ys;
        ManeuverResult r = execute_decision(w, d, {});
        for (const auto& t : r.trace) ys.push_back(t.y);
        while (ys.size() < 120) {
          r = execute_decision(w, Decision::keep, {});
          for (const auto& t : r.trace) ys.push_back(t.y);
        }
        double overshoot = 0.0;
        int last_bad = -1;
        for (std::size_t k = 0; k < ys.size(); ++k) {
          overshoot = std::max(overshoot, dir * (ys[k] - y1));
          if (std::abs(ys[k] - y1) > 0.1) last_bad = static_cast<int>(k);
        }
        EXPECT_LE(overshoot, 0.5) << lane << " " << static_cast<int>(d) << " " << v0;
        EXPECT_LE((last_bad + 1) * w.dt, 6.0 + 1e-9) << lane << " " << static_cast<int>(d) << " " << v0;
      }
    }
  }
}

TEST(Execute, CommandsStayInBoundsAndPidResets) {
  WorldState w = empty_road(1, 5.0);
  for (Decision d : {Decision::left, Decision::keep, Decision::right}) {
    Tracker tr(plan_lane_change(w.ego(), d, w.lanes), PilotConfig{});
    EXPECT_EQ(tr.lateral_state().integral, 0.0);
    EXPECT_EQ(tr.lateral_state().prev_error, 0.0);
    EXPECT_EQ(tr.longitudinal_state().integral, 0.0);
    const ManeuverResult r = execute_decision(w, d, {});
    for (const auto& t : r.trace) {
      EXPECT_GE(t.command.throttle, 0.0);
      EXPECT_LE(t.command.throttle, 1.0);
      EXPECT_GE(t.command.brake, 0.0);
      EXPECT_LE(t.command.brake, 1.0);
      EXPECT_LE(std::abs(t.command.steer), 1.0);
      EXPECT_EQ(t.command.throttle * t.command.brake, 0.0);
    }
    EXPECT_LE(r.steps, 100);
  }
}

TEST(Execute, CollisionEndsManeuverWithPenalty) {
  WorldState w = empty_road(1, 8.0);
  sim::VehicleState wall;
  wall.id = 1;
  wall.x = w.ego().x + 10.0;
  wall.y = w.ego().y;
  w.vehicles.push_back(wall);
  const ManeuverResult r = execute_decision(w, Decision::keep, {});
  EXPECT_EQ(w.status, sim::EpisodeStatus::collision);
  EXPECT_EQ(r.reward.r_collide, -500.0);
  EXPECT_LT(r.steps, 100);
  EXPECT_THROW(execute_decision(w, Decision::keep, {}), ContractError);
}

TEST(Execute, ObserverSeesEveryTick) {
  WorldState w = empty_road(1, 8.0);
  int ticks = 0;
  const ManeuverResult r = execute_decision(w, Decision::keep, {}, [&](const WorldState&, const sim::StepEvents&) { ++ticks; });
  EXPECT_EQ(ticks, r.steps);
  EXPECT_TRUE(r.arrived);
  double sum = 0.0;
  for (const auto& t : r.trace) sum += t.reward;
  EXPECT_NEAR(sum, r.reward.total, 1e-9);
}
