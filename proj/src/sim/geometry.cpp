#include "hppo/sim/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace hppo::sim {

std::array<Vec2, 4> OrientedRect::corners() const {
  const double c = std::cos(heading), s = std::sin(heading);
  const double hl = 0.5 * length, hw = 0.5 * width;
  std::array<Vec2, 4> out;
  const double sx[4] = {1, 1, -1, -1};
  const double sy[4] = {1, -1, -1, 1};
  for (int i = 0; i < 4; ++i) {
    const double lx = sx[i] * hl, ly = sy[i] * hw;
    out[static_cast<std::size_t>(i)] = {cx + c * lx - s * ly, cy + s * lx + c * ly};
  }
  return out;
}

bool OrientedRect::contains(Vec2 p) const {
  const Vec2 l = to_local(p, {cx, cy}, heading);
  return std::abs(l.x) < 0.5 * length && std::abs(l.y) < 0.5 * width;
}

double sat_separation(const OrientedRect& a, const OrientedRect& b) {
  const double dx = b.cx - a.cx, dy = b.cy - a.cy;
  const Vec2 axes[4] = {{std::cos(a.heading), std::sin(a.heading)},
                        {-std::sin(a.heading), std::cos(a.heading)},
                        {std::cos(b.heading), std::sin(b.heading)},
                        {-std::sin(b.heading), std::cos(b.heading)}};
  auto radius = [](const OrientedRect& r, Vec2 axis) {
    const double c = std::cos(r.heading), s = std::sin(r.heading);
    return 0.5 * r.length * std::abs(axis.x * c + axis.y * s) + 0.5 * r.width * std::abs(-axis.x * s + axis.y * c);
  };
  double best = -1e300;
  for (const Vec2& ax : axes) {
    const double dist = std::abs(dx * ax.x + dy * ax.y);
    best = std::max(best, dist - radius(a, ax) - radius(b, ax));
  }
  return best;
}

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

Vec2 to_local(Vec2 p, Vec2 origin, double heading) {
  const double c = std::cos(heading), s = std::sin(heading);
  const double dx = p.x - origin.x, dy = p.y - origin.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 to_world(Vec2 p, Vec2 origin, double heading) {
  const double c = std::cos(heading), s = std::sin(heading);
  return {origin.x + c * p.x - s * p.y, origin.y + s * p.x + c * p.y};
}

}  // namespace hppo::sim
