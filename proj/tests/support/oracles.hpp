#pragma once

// Independent brute-force oracles used by unit and acceptance tests. None of
// these call into the code paths they check.

#include <algorithm>
#include <cmath>
#include <vector>

namespace hppo::oracle {

struct RectPose {
  double cx, cy, heading, length, width;
};

/// Strict point-in-rectangle test in the rectangle's own frame.
inline bool point_inside(const RectPose& r, double px, double py) {
  const double dx = px - r.cx, dy = py - r.cy;
  const double c = std::cos(r.heading), s = std::sin(r.heading);
  const double u = c * dx + s * dy, v = -s * dx + c * dy;
  return std::abs(u) < 0.5 * r.length && std::abs(v) < 0.5 * r.width;
}

/// Dense point sampling: a regular n x n lattice over each rectangle,
/// including its edges and corners. Overlap iff some sample of one rectangle
/// lies strictly inside the other.
inline bool sampled_overlap(const RectPose& a, const RectPose& b, int n = 100) {
  auto any_inside = [n](const RectPose& src, const RectPose& dst) {
    const double c = std::cos(src.heading), s = std::sin(src.heading);
    for (int i = 0; i < n; ++i) {
      const double u = (static_cast<double>(i) / (n - 1) - 0.5) * src.length;
      for (int j = 0; j < n; ++j) {
        const double v = (static_cast<double>(j) / (n - 1) - 0.5) * src.width;
        if (point_inside(dst, src.cx + c * u - s * v, src.cy + s * u + c * v)) return true;
      }
    }
    return false;
  };
  return any_inside(a, b) || any_inside(b, a);
}

/// Mean and final Euclidean displacement, written out longhand.
struct Displacement {
  double mean = 0.0;
  double final = 0.0;
};

inline Displacement displacement_oracle(const std::vector<double>& pred_xy, const std::vector<double>& true_xy) {
  const std::size_t steps = pred_xy.size() / 2;
  double total = 0.0, last = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double ex = pred_xy[2 * t] - true_xy[2 * t];
    const double ey = pred_xy[2 * t + 1] - true_xy[2 * t + 1];
    last = std::sqrt(ex * ex + ey * ey);
    total += last;
  }
  return {total / static_cast<double>(steps), last};
}

/// Generalized advantages by explicit discounted sums of TD errors (no
/// backward recursion). `values` has one more entry than `rewards` (bootstrap).
inline std::vector<double> gae_bruteforce(const std::vector<double>& rewards, const std::vector<double>& values,
                                          const std::vector<bool>& done, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = done[t] ? 0.0 : values[t + 1];
    delta[t] = rewards[t] + gamma * next - values[t];
  }
  std::vector<double> adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double weight = 1.0;
    for (std::size_t l = t; l < n; ++l) {
      adv[t] += weight * delta[l];
      if (done[l]) break;
      weight *= gamma * lambda;
    }
  }
  return adv;
}

}  // namespace hppo::oracle
