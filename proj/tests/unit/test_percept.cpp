#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hppo/errors.hpp"
#include "hppo/percept/percept.hpp"
#include "hppo/sim/world.hpp"

using namespace hppo;
using namespace hppo::percept;
using sim::VehicleState;
using sim::WorldState;

namespace {

WorldState bare_world() {
  sim::ScenarioConfig sc;
  sc.npc_count = 0;
  return sim::reset(sc, 1);
}

VehicleState npc(int id, double x, double y, double heading = 0.0, double speed = 0.0) {
  VehicleState v;
  v.id = id;
  v.x = x;
  v.y = y;
  v.heading = heading;
  v.speed = speed;
  return v;
}

std::vector<int> brute_neighbors(const WorldState& w, int k) {
  std::vector<std::tuple<double, int>> all;
  const auto& e = w.ego();
  for (const auto& v : w.vehicles) {
    if (!v.is_ego) all.emplace_back(std::hypot(v.x - e.x, v.y - e.y), v.id);
  }
  std::sort(all.begin(), all.end());
  std::vector<int> out;
  for (int i = 0; i < std::min<int>(k, static_cast<int>(all.size())); ++i) out.push_back(std::get<1>(all[i]));
  return out;
}

}  // namespace

TEST(NearestNeighbors, EmptyWorld) { EXPECT_TRUE(nearest_neighbors(bare_world()).empty()); }

TEST(NearestNeighbors, SortedByDistance) {
  WorldState w = bare_world();
  const double ex = w.ego().x, ey = w.ego().y;
  w.vehicles.push_back(npc(1, ex + 5, ey));
  w.vehicles.push_back(npc(2, ex + 2, ey));
  w.vehicles.push_back(npc(3, ex + 9, ey));
  EXPECT_EQ(nearest_neighbors(w), (std::vector<int>{2, 1, 3}));
  EXPECT_THROW(nearest_neighbors(w, 0), ContractError);
}

TEST(NearestNeighbors, TiesGoToLowerId) {
  WorldState w = bare_world();
  w.vehicles.push_back(npc(2, w.ego().x + 10, w.ego().y));
  w.vehicles.push_back(npc(1, w.ego().x - 10, w.ego().y));
  EXPECT_EQ(nearest_neighbors(w), (std::vector<int>{1, 2}));
}

TEST(NearestNeighbors, MatchesBruteForceOnRandomWorlds) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    WorldState w = bare_world();
    for (int i = 1; i <= 20; ++i) w.vehicles.push_back(npc(i, uniform(rng, -50, 50), uniform(rng, 0, 14)));
    EXPECT_EQ(nearest_neighbors(w), brute_neighbors(w, 8));
  }
}

TEST(SensorRows, EgoAlonePadsWithZeroRows) {
  const SensorMatrix m = sensor_rows(bare_world(), {});
  EXPECT_EQ(m.rows[0][kValid], 1.0);
  EXPECT_EQ(m.rows[0][kCosHeading], 1.0);
  EXPECT_EQ(m.rows[0][kLaneOffset], 1.0);  // ego starts in lane 1
  for (int i = 1; i < kSensorRows; ++i) {
    for (double f : m.rows[static_cast<std::size_t>(i)]) EXPECT_EQ(f, 0.0);
  }
  EXPECT_EQ(m.flat().size(), static_cast<std::size_t>(kSensorWidth));
}

TEST(SensorRows, NeighborDirectlyAheadSameMotion) {
  WorldState w = bare_world();
  w.ego().speed = 6.0;
  w.vehicles.push_back(npc(1, w.ego().x + 10, w.ego().y, 0.0, 6.0));
  const SensorMatrix m = sensor_rows(w, nearest_neighbors(w));
  const SensorRow expected{10, 0, 0, 1, 6.0, 0, 0, 0, 0, 1};
  EXPECT_EQ(m.rows[1], expected);
  EXPECT_EQ(m.ids[0], 1);
  EXPECT_EQ(m.ids[1], -1);
}

TEST(SensorRows, LeftNeighborHasPositiveLateralAndLaneOffset) {
  WorldState w = bare_world();
  w.vehicles.push_back(npc(1, w.ego().x, w.lanes.lane_center(2) + 0.25, 0.0, 3.0));
  const SensorMatrix m = sensor_rows(w, {1});
  EXPECT_DOUBLE_EQ(m.rows[1][kYRel], 3.75);
  EXPECT_EQ(m.rows[1][kLaneOffset], 1.0);
  EXPECT_DOUBLE_EQ(m.rows[1][kLateralInLane], 0.25);
  EXPECT_DOUBLE_EQ(m.rows[1][kLonVelocity], 3.0);
}

TEST(SensorRows, LongitudinalTranslationIsExact) {
  // Dyadic coordinates keep every subtraction exact, so tolerance is zero.
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    WorldState w = bare_world();
    auto dyadic = [&](double lo, double hi) { return std::round(uniform(rng, lo, hi) * 1024.0) / 1024.0; };
    w.ego().x = dyadic(0, 200);
    w.ego().y = dyadic(1, 12);
    w.ego().heading = 0.0625 * uniform_index(rng, 5) - 0.125;
    w.ego().speed = dyadic(0, 9);
    for (int i = 1; i <= 10; ++i) {
      w.vehicles.push_back(npc(i, dyadic(0, 260), dyadic(0.5, 13.5), 0.03125 * uniform_index(rng, 5) - 0.0625,
                               dyadic(0, 9)));
    }
    WorldState moved = w;
    const double shift = 0.5 * uniform_index(rng, 200);
    for (auto& v : moved.vehicles) v.x += shift;
    EXPECT_EQ(sensor_rows(w, nearest_neighbors(w)), sensor_rows(moved, nearest_neighbors(moved)));
  }
}

TEST(SensorRows, RigidRotationPreservesGeometricFields) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    WorldState w = bare_world();
    w.ego().heading = uniform(rng, -0.3, 0.3);
    w.ego().speed = uniform(rng, 0, 9);
    for (int i = 1; i <= 9; ++i) {
      w.vehicles.push_back(npc(i, uniform(rng, -40, 40), uniform(rng, 0, 14), uniform(rng, -0.3, 0.3), uniform(rng, 0, 9)));
    }
    WorldState turned = w;
    const double phi = uniform(rng, -3, 3);
    const auto& e = w.ego();
    for (auto& v : turned.vehicles) {
      const double dx = v.x - e.x, dy = v.y - e.y;
      v.x = e.x + std::cos(phi) * dx - std::sin(phi) * dy;
      v.y = e.y + std::sin(phi) * dx + std::cos(phi) * dy;
      v.heading = sim::wrap_angle(v.heading + phi);
    }
    const auto ids = nearest_neighbors(w);
    ASSERT_EQ(ids, nearest_neighbors(turned));
    const SensorMatrix a = sensor_rows(w, ids), b = sensor_rows(turned, ids);
    for (int i = 1; i < kSensorRows; ++i) {
      for (int f : {kXRel, kYRel, kSinHeading, kCosHeading, kSpeed, kLonVelocity, kLatVelocity, kValid}) {
        EXPECT_NEAR(a.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(f)],
                    b.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(f)], 1e-9);
      }
    }
  }
}

TEST(SensorRows, FuzzOrderingAndRowInvariants) {
  sim::ScenarioConfig sc;
  sc.npc_count = 14;
  sc.npc_spawn_min = 0;
  sc.npc_spawn_max = 120;
  sc.max_episode_steps = 1000;
  WorldState w = sim::reset(sc, 3);
  Rng rng(3);
  int steps = 0;
  while (steps < 1000) {
    if (sim::is_terminal(w.status)) {
      w = sim::reset(sc, static_cast<std::uint64_t>(steps) + 100);
    }
    const auto ids = nearest_neighbors(w);
    ASSERT_EQ(ids, brute_neighbors(w, 8));
    const SensorMatrix m = sensor_rows(w, ids);
    double prev = 0.0;
    for (const SensorRow& r : m.rows) {
      if (r[kValid] == 0.0) {
        for (double f : r) ASSERT_EQ(f, 0.0);
        continue;
      }
      ASSERT_NEAR(r[kSinHeading] * r[kSinHeading] + r[kCosHeading] * r[kCosHeading], 1.0, 1e-9);
      const double d = std::hypot(r[kXRel], r[kYRel]);
      ASSERT_GE(d, prev - 1e-12);
      prev = d;
    }
    sim::step(w, {uniform01(rng), 0.0, uniform(rng, -0.02, 0.02)});
    ++steps;
  }
}

TEST(History, FifoKeepsTenSteps) {
  WorldState w = bare_world();
  w.vehicles.push_back(npc(1, 10, 5));
  HistoryBuffer h;
  for (int t = 0; t < 11; ++t) {
    w.vehicles[1].x = 10.0 + t;
    h.push(w, {1});
    EXPECT_EQ(h.length(), std::min(t + 1, kHistorySteps));
  }
  EXPECT_EQ(h.step(0).xy[0], 11.0);  // the first push (x = 10) was evicted
  for (int t = 0; t < kHistorySteps; ++t) EXPECT_TRUE(h.mask(t, 0));
}

TEST(History, LateEntrantIsMaskedBeforeEntry) {
  WorldState w = bare_world();
  w.vehicles.push_back(npc(1, 10, 5));
  w.vehicles.push_back(npc(2, 30, 5));
  HistoryBuffer h;
  for (int t = 1; t <= 10; ++t) h.push(w, t < 7 ? std::vector<int>{1} : std::vector<int>{1, 2});
  const int slot = h.slot_of(2);
  ASSERT_EQ(slot, 1);
  for (int t = 0; t < 10; ++t) EXPECT_EQ(h.mask(t, slot), t >= 6) << t;
  std::array<bool, kHistorySteps> valid{};
  const auto xy = h.track(slot, &valid);
  EXPECT_EQ(xy[0], 0.0);
  EXPECT_EQ(xy[2 * 9], 30.0);
  EXPECT_TRUE(valid[9]);
  EXPECT_FALSE(valid[5]);
}

TEST(History, SlotsAreStableAndReusedAfterExit) {
  WorldState w = bare_world();
  for (int i = 1; i <= 3; ++i) w.vehicles.push_back(npc(i, 10.0 * i, 5));
  HistoryBuffer h;
  h.push(w, {1, 2});
  h.push(w, {2, 1});  // reordering keeps slots
  EXPECT_EQ(h.slot_of(1), 0);
  EXPECT_EQ(h.slot_of(2), 1);
  h.push(w, {3, 2});  // 1 leaves, 3 takes its slot
  EXPECT_EQ(h.slot_of(3), 0);
  EXPECT_FALSE(h.mask(1, 0));
  EXPECT_TRUE(h.mask(2, 0));
  h.push(w, {1, 2});  // 1 returns: fresh run
  EXPECT_EQ(h.slot_of(1), 0);
  EXPECT_FALSE(h.mask(0, 0));
  EXPECT_TRUE(h.mask(3, 0));
}

TEST(Grid, OffRoadRegionIsOffRoad) {
  WorldState w = bare_world();
  w.ego().y = -100.0;
  const SemanticGrid g = render_semantic_grid(w, {});
  EXPECT_EQ(g.count(CellClass::off_road) + g.count(CellClass::ego), 64 * 64);
}

TEST(Grid, EgoFootprintIsCentralBlock) {
  const SemanticGrid g = render_semantic_grid(bare_world(), {});
  // 4.5 x 2.0 m at 0.5 m cells with strict center containment: 8 rows x 4 cols.
  EXPECT_EQ(g.count(CellClass::ego), 32);
  for (int r = 28; r < 36; ++r) {
    for (int c = 30; c < 34; ++c) EXPECT_EQ(g.at(r, c), CellClass::ego);
  }
}

TEST(Grid, LaneMarkingsAndRoad) {
  const WorldState w = bare_world();  // ego at lane-1 center, y = 5.25
  const SemanticGrid g = render_semantic_grid(w, {});
  // Column c has lateral offset v = (31.5 - c) * 0.5; boundary y = 3.5 -> v = -1.75 -> c = 35.
  EXPECT_EQ(g.at(0, 35), CellClass::lane_marking);
  EXPECT_EQ(g.at(0, 38), CellClass::road);
  // Right edge y = 0 -> c = 42; beyond it off-road.
  EXPECT_EQ(g.at(0, 42), CellClass::lane_marking);
  EXPECT_EQ(g.at(0, 43), CellClass::off_road);
}

TEST(Grid, NpcPaintingAndClipping) {
  WorldState w = bare_world();
  w.vehicles.push_back(npc(1, w.ego().x + 8.0, w.ego().y));
  EXPECT_EQ(render_semantic_grid(w, {}).count(CellClass::npc_vehicle), 32);
  w.vehicles[1].x = w.ego().x + 40.0;
  EXPECT_EQ(render_semantic_grid(w, {}).count(CellClass::npc_vehicle), 0);
}

TEST(Grid, OneHotTranslationAndDeterminism) {
  sim::ScenarioConfig sc;
  sc.npc_spawn_min = 0;
  sc.npc_spawn_max = 40;
  sc.npc_count = 6;
  WorldState w = sim::reset(sc, 9);
  Rng rng(9);
  for (int t = 0; t < 40 && !sim::is_terminal(w.status); ++t) {
    const SemanticGrid g = render_semantic_grid(w, {});
    EXPECT_EQ(g, render_semantic_grid(w, {}));
    const grad::Tensor oh = g.one_hot();
    const std::size_t plane = 64 * 64;
    for (std::size_t i = 0; i < plane; ++i) {
      double s = 0;
      for (int k = 0; k < kGridClasses; ++k) s += oh[k * plane + i];
      ASSERT_EQ(s, 1.0);
    }
    EXPECT_GE(g.count(CellClass::ego), 1);
    sim::step(w, {uniform01(rng), 0.0, 0.0});
  }
  // Whole-cell longitudinal translation with exactly representable poses.
  WorldState a = bare_world();
  a.vehicles.push_back(npc(1, 7.25, 8.75, 0.125));
  a.vehicles.push_back(npc(2, -5.5, 2.0, -0.0625));
  WorldState b = a;
  for (auto& v : b.vehicles) v.x += 64.0;
  EXPECT_EQ(render_semantic_grid(a, {}), render_semantic_grid(b, {}));
}

TEST(Grid, PgmDump) {
  std::ostringstream os;
  render_semantic_grid(bare_world(), {4, 3, 0.5}).write_pgm(os);
  EXPECT_EQ(os.str().substr(0, 9), "P2\n3 4\n4\n");
  EXPECT_THROW(render_semantic_grid(bare_world(), {4, 3, 0.0}), ConfigError);
}
