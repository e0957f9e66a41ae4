#pragma once

#include <array>

#include "hppo/sim/types.hpp"

namespace hppo::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Rectangle centered at (cx, cy), long side along `heading`.
struct OrientedRect {
  double cx = 0.0, cy = 0.0, heading = 0.0;
  double length = 0.0, width = 0.0;

  static OrientedRect of(const VehicleState& v) { return {v.x, v.y, v.heading, v.length, v.width}; }
  std::array<Vec2, 4> corners() const;
  /// Strict interior test.
  bool contains(Vec2 p) const;
};

/// Largest separation along the four separating axes. Negative values are
/// penetration depths; overlap iff the result is < 0.
double sat_separation(const OrientedRect& a, const OrientedRect& b);
inline bool overlaps(const OrientedRect& a, const OrientedRect& b) { return sat_separation(a, b) < 0.0; }

double wrap_angle(double a);

/// World point -> frame anchored at `origin` with x along `heading`.
Vec2 to_local(Vec2 p, Vec2 origin, double heading);
Vec2 to_world(Vec2 p, Vec2 origin, double heading);

}  // namespace hppo::sim
