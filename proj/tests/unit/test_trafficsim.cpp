#include <gtest/gtest.h>

#include <cmath>

#include "hppo/errors.hpp"
#include "hppo/sim/world.hpp"
#include "support/oracles.hpp"

using namespace hppo;
using namespace hppo::sim;

namespace {

ScenarioConfig empty_scenario() {
  ScenarioConfig sc;
  sc.npc_count = 0;
  return sc;
}

// World with the ego parked far behind and a single NPC placed by hand.
WorldState lone_npc(double speed, double x = 100.0) {
  WorldState w = reset(empty_scenario(), 1);
  VehicleState npc;
  npc.id = 1;
  npc.x = x;
  npc.y = w.lanes.lane_center(2);
  npc.speed = speed;
  w.vehicles.push_back(npc);
  return w;
}

}  // namespace

TEST(Reset, NoNpcsGivesEgoOnly) {
  const WorldState w = reset(empty_scenario(), 7);
  ASSERT_EQ(w.vehicles.size(), 1u);
  EXPECT_TRUE(w.ego().is_ego);
  EXPECT_EQ(w.ego().speed, 0.0);
  EXPECT_EQ(w.ego().x, 0.0);
  EXPECT_EQ(w.status, EpisodeStatus::running);
}

TEST(Reset, SameSeedSameWorld) {
  ScenarioConfig sc;
  EXPECT_EQ(reset(sc, 42), reset(sc, 42));
  EXPECT_FALSE(reset(sc, 42) == reset(sc, 43));
}

TEST(Reset, DefaultDensityRespectsSpawnGaps) {
  ScenarioConfig sc;  // 4 lanes x 500 m, 12 NPCs
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const WorldState w = reset(sc, seed);
    ASSERT_EQ(w.vehicles.size(), 13u);
    int egos = 0;
    for (std::size_t i = 0; i < w.vehicles.size(); ++i) {
      egos += w.vehicles[i].is_ego;
      for (std::size_t j = i + 1; j < w.vehicles.size(); ++j) {
        const auto& a = w.vehicles[i];
        const auto& b = w.vehicles[j];
        if (std::abs(a.y - b.y) > 1e-9) continue;
        EXPECT_GE(std::abs(a.x - b.x) - a.length, 2.0 * a.length) << "seed " << seed;
      }
    }
    EXPECT_EQ(egos, 1);
    EXPECT_TRUE(detect_collision(w).empty());
  }
}

TEST(Reset, OverDenseScenarioIsPlacementError) {
  ScenarioConfig sc;
  sc.npc_count = 60;
  sc.npc_spawn_min = 20;
  sc.npc_spawn_max = 60;
  EXPECT_THROW(reset(sc, 3), PlacementError);
}

TEST(Reset, InvalidScenarioIsConfigError) {
  ScenarioConfig sc;
  sc.lanes.lane_count = 1;
  EXPECT_THROW(reset(sc, 0), ConfigError);
}

TEST(SurroundingPolicy, OpenRoadConvergesToCycleSpeed) {
  WorldState w = lone_npc(0.0);
  for (int i = 0; i < 600; ++i) step(w, {});
  EXPECT_NEAR(w.find(1)->speed, 24.0 / 3.6, 0.1);
}

TEST(SurroundingPolicy, StoppedLeaderFiveMetersAheadBrakes) {
  WorldState w = lone_npc(24.0 / 3.6);
  VehicleState leader;
  leader.id = 2;
  leader.x = w.find(1)->x + 4.5 + 5.0;  // 5 m bumper gap
  leader.y = w.find(1)->y;
  leader.speed = 0.0;
  w.vehicles.push_back(leader);
  const ControlCommand c = surrounding_policy(w, 1);
  EXPECT_GT(c.brake, 0.0);
  EXPECT_EQ(c.throttle, 0.0);
}

TEST(SurroundingPolicy, EquilibriumHoldsLane) {
  const WorldState w = lone_npc(24.0 / 3.6);
  const ControlCommand c = surrounding_policy(w, 1);
  EXPECT_LT(std::abs(c.steer), 1e-6);
  EXPECT_NEAR(c.throttle, 0.0, 1e-9);
  EXPECT_EQ(c.brake, 0.0);
}

TEST(SurroundingPolicy, EgoIdIsContractError) {
  const WorldState w = lone_npc(1.0);
  EXPECT_THROW(surrounding_policy(w, 0), ContractError);
}

TEST(Step, ZeroCommandAtRestStaysPut) {
  WorldState w = reset(empty_scenario(), 1);
  const VehicleState before = w.ego();
  step(w, {});
  EXPECT_EQ(w.ego().x, before.x);
  EXPECT_EQ(w.ego().y, before.y);
  EXPECT_EQ(w.time_step, 1);
}

TEST(Step, FullThrottleFromRestMatchesClosedForm) {
  WorldState w = reset(empty_scenario(), 1);
  step(w, {1.0, 0.0, 0.0});
  const double a = w.scenario.vehicle.max_accel, dt = w.dt;
  EXPECT_NEAR(w.ego().speed, a * dt, 1e-12);
  EXPECT_NEAR(w.ego().x, 0.5 * a * dt * dt, 1e-12);
}

TEST(Step, OverlapAfterIntegrationIsCollision) {
  WorldState w = reset(empty_scenario(), 1);
  VehicleState npc;
  npc.id = 1;
  npc.x = 3.0;
  npc.y = w.ego().y;
  npc.speed = 0.0;
  w.vehicles.push_back(npc);
  w.ego().speed = 5.0;
  const StepEvents ev = step(w, {1.0, 0.0, 0.0});
  EXPECT_TRUE(ev.collision);
  EXPECT_EQ(w.status, EpisodeStatus::collision);
  EXPECT_THROW(step(w, {}), ContractError);
}

TEST(DetectCollision, FarApartIsEmpty) {
  WorldState w = lone_npc(0.0, 100.0);
  EXPECT_TRUE(detect_collision(w).empty());
}

TEST(DetectCollision, IdenticalPoseOverlaps) {
  VehicleState a;
  a.x = 10;
  a.y = 5;
  VehicleState b = a;
  EXPECT_TRUE(overlaps(OrientedRect::of(a), OrientedRect::of(b)));
}

TEST(DetectCollision, AgreesWithPointSamplingAndIsSymmetric) {
  Rng rng(77);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    OrientedRect a{0, 0, uniform(rng, -kPi, kPi), 4.5, 2.0};
    OrientedRect b{uniform(rng, -6, 6), uniform(rng, -4, 4), uniform(rng, -kPi, kPi), 4.5, 2.0};
    const double sep = sat_separation(a, b);
    EXPECT_EQ(overlaps(a, b), overlaps(b, a));
    if (std::abs(sep) <= 1e-6) continue;
    const bool oracle = oracle::sampled_overlap({a.cx, a.cy, a.heading, a.length, a.width},
                                                 {b.cx, b.cy, b.heading, b.length, b.width});
    EXPECT_EQ(overlaps(a, b), oracle) << "trial " << trial << " sep " << sep;
    ++checked;
  }
  EXPECT_GT(checked, 1900);
}

TEST(Reward, ForwardProgressOnly) {
  WorldState prev = reset(empty_scenario(), 1);
  WorldState next = prev;
  next.ego().x += 0.8;
  const RewardBreakdown r = compute_reward(prev, next, StepEvents{});
  EXPECT_EQ(r.r_collide, 0.0);
  EXPECT_EQ(r.r_out_road, 0.0);
  EXPECT_NEAR(r.r_go_forward, 0.8, 1e-12);
  EXPECT_EQ(r.r_success, 0.0);
  EXPECT_NEAR(r.total, 0.8, 1e-12);
}

TEST(Reward, CollisionWithProgress) {
  WorldState prev = reset(empty_scenario(), 1);
  WorldState next = prev;
  next.ego().x += 0.3;
  StepEvents ev;
  ev.collision = true;
  const RewardBreakdown r = compute_reward(prev, next, ev);
  EXPECT_EQ(r.r_collide, -500.0);
  EXPECT_NEAR(r.total, -499.7, 1e-12);
  EXPECT_EQ(r.total, r.r_collide + r.r_out_road + r.r_go_forward + r.r_success);
}

TEST(Reward, DestinationBonusGrantedOnce) {
  ScenarioConfig sc = empty_scenario();
  sc.lanes.road_length = 40.0;
  WorldState w = reset(sc, 1);
  double bonus_total = 0.0;
  int destination_events = 0;
  while (!is_terminal(w.status)) {
    const WorldState prev = w;
    const StepEvents ev = step(w, {1.0, 0.0, 0.0});
    bonus_total += compute_reward(prev, w, ev).r_success;
    destination_events += ev.destination;
  }
  EXPECT_EQ(w.status, EpisodeStatus::success);
  EXPECT_EQ(destination_events, 1);
  EXPECT_EQ(bonus_total, 100.0 + 150.0 + 200.0 + 1000.0);
}

TEST(Reward, OffRoadStepPenalty) {
  WorldState w = reset(empty_scenario(), 1);
  w.ego().y = 0.5;  // right-edge corners hang over the road boundary
  const WorldState prev = w;
  const StepEvents ev = step(w, {});
  EXPECT_TRUE(ev.off_road);
  EXPECT_EQ(compute_reward(prev, w, ev).r_out_road, -10.0);
  EXPECT_EQ(w.status, EpisodeStatus::running);  // center still on the road
}

TEST(EpisodeStatus, Definitions) {
  WorldState w = reset(empty_scenario(), 1);
  EXPECT_EQ(episode_status(w, 100), EpisodeStatus::running);
  w.time_step = 100;
  w.ego().x = 200.0;
  EXPECT_EQ(episode_status(w, 100), EpisodeStatus::timeout);
  w.time_step = 3;
  w.ego().x = w.lanes.road_length;
  EXPECT_EQ(episode_status(w, 100), EpisodeStatus::success);
  w.ego().x = 10.0;
  w.ego().y = -1.5;
  EXPECT_EQ(episode_status(w, 100), EpisodeStatus::off_road_terminal);
  w.status = EpisodeStatus::collision;
  EXPECT_EQ(episode_status(w, 100), EpisodeStatus::collision);  // absorbing
}

TEST(Properties, DeterminismNoTeleportSpeedCapAndMonotoneFlags) {
  ScenarioConfig sc;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WorldState a = reset(sc, seed), b = reset(sc, seed);
    Rng cmd_rng(seed + 99);
    std::array<bool, 4> flags{};
    while (!is_terminal(a.status)) {
      ControlCommand c{uniform01(cmd_rng), 0.0, uniform(cmd_rng, -0.05, 0.05)};
      if (uniform01(cmd_rng) < 0.1) c = {0.0, uniform01(cmd_rng), 0.0};
      const WorldState prev = a;
      const StepEvents ev = step(a, c);
      step(b, c);
      ASSERT_EQ(a, b);
      const double amax = sc.vehicle.max_accel;
      for (std::size_t i = 0; i < a.vehicles.size(); ++i) {
        const auto& p = prev.vehicles[i];
        const auto& n = a.vehicles[i];
        EXPECT_LE(std::hypot(n.x - p.x, n.y - p.y), (p.speed + amax * a.dt) * a.dt + 1e-9);
        if (!n.is_ego && a.time_step > 50) EXPECT_LE(n.speed, sc.cycle_speed + 0.01);
      }
      const RewardBreakdown r = compute_reward(prev, a, ev);
      EXPECT_EQ(r.total, r.r_collide + r.r_out_road + r.r_go_forward + r.r_success);
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_TRUE(!flags[k] || a.milestone_flags[k]);
        flags[k] = a.milestone_flags[k];
      }
    }
  }
}

TEST(Json, WorldDumpHasVehicles) {
  const WorldState w = reset(ScenarioConfig{}, 5);
  const auto j = to_json(w);
  EXPECT_EQ(j["vehicles"].size(), 13u);
  EXPECT_EQ(j["status"], "running");
}
