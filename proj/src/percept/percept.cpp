#include "hppo/percept/percept.hpp"

#include <algorithm>
#include <cmath>

#include "hppo/errors.hpp"
#include "hppo/sim/geometry.hpp"

namespace hppo::percept {

using sim::Vec2;
using sim::VehicleState;
using sim::WorldState;

std::vector<double> SensorMatrix::flat() const {
  std::vector<double> out;
  out.reserve(kSensorWidth);
  for (const SensorRow& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

std::vector<int> nearest_neighbors(const WorldState& world, int k) {
  if (k < 1) throw ContractError("nearest_neighbors needs k >= 1");
  const VehicleState& ego = world.ego();
  std::vector<std::pair<double, int>> by_dist;
  for (const VehicleState& v : world.vehicles) {
    if (v.is_ego) continue;
    const double dx = v.x - ego.x, dy = v.y - ego.y;
    by_dist.emplace_back(dx * dx + dy * dy, v.id);
  }
  const std::size_t n = std::min(by_dist.size(), static_cast<std::size_t>(k));
  std::partial_sort(by_dist.begin(), by_dist.begin() + static_cast<std::ptrdiff_t>(n), by_dist.end());
  std::vector<int> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(by_dist[i].second);
  return ids;
}

SensorMatrix sensor_rows(const WorldState& world, const std::vector<int>& neighbor_ids) {
  SensorMatrix m;
  m.ids.fill(-1);
  const VehicleState& ego = world.ego();
  const sim::LaneSpec& lanes = world.lanes;
  const int ego_lane = lanes.lane_of(ego.y);
  const double evx = ego.speed * std::cos(ego.heading), evy = ego.speed * std::sin(ego.heading);

  SensorRow& e = m.rows[0];
  e[kSinHeading] = std::sin(ego.heading);
  e[kCosHeading] = std::cos(ego.heading);
  e[kSpeed] = ego.speed;
  e[kLaneOffset] = ego_lane;
  e[kLateralInLane] = ego.y - lanes.lane_center(ego_lane);
  e[kLonVelocity] = evx;
  e[kLatVelocity] = evy;
  e[kValid] = 1.0;

  const std::size_t n = std::min(neighbor_ids.size(), static_cast<std::size_t>(kNeighbors));
  for (std::size_t i = 0; i < n; ++i) {
    const VehicleState* v = world.find(neighbor_ids[i]);
    if (!v) throw ContractError("sensor_rows: unknown vehicle id " + std::to_string(neighbor_ids[i]));
    const Vec2 rel = sim::to_local({v->x, v->y}, {ego.x, ego.y}, ego.heading);
    const double dh = sim::wrap_angle(v->heading - ego.heading);
    const Vec2 dvel = sim::to_local({v->speed * std::cos(v->heading) - evx, v->speed * std::sin(v->heading) - evy},
                                    {0.0, 0.0}, ego.heading);
    const int lane = lanes.lane_of(v->y);
    SensorRow& r = m.rows[i + 1];
    r[kXRel] = rel.x;
    r[kYRel] = rel.y;
    r[kSinHeading] = std::sin(dh);
    r[kCosHeading] = std::cos(dh);
    r[kSpeed] = v->speed;
    r[kLaneOffset] = lane - ego_lane;
    r[kLateralInLane] = v->y - lanes.lane_center(lane);
    r[kLonVelocity] = dvel.x;
    r[kLatVelocity] = dvel.y;
    r[kValid] = 1.0;
    m.ids[i] = v->id;
  }
  return m;
}

void HistoryBuffer::push(const WorldState& world, const std::vector<int>& neighbor_ids) {
  Step s;
  s.ids.fill(-1);
  const std::size_t n = std::min(neighbor_ids.size(), static_cast<std::size_t>(kNeighbors));
  const std::vector<int> tracked(neighbor_ids.begin(), neighbor_ids.begin() + static_cast<std::ptrdiff_t>(n));
  if (!steps_.empty()) {
    for (int k = 0; k < kNeighbors; ++k) {
      const int id = steps_.back().ids[static_cast<std::size_t>(k)];
      if (id >= 0 && std::find(tracked.begin(), tracked.end(), id) != tracked.end()) {
        s.ids[static_cast<std::size_t>(k)] = id;
      }
    }
  }
  for (int id : tracked) {
    if (std::find(s.ids.begin(), s.ids.end(), id) != s.ids.end()) continue;
    *std::find(s.ids.begin(), s.ids.end(), -1) = id;
  }
  for (int k = 0; k < kNeighbors; ++k) {
    const int id = s.ids[static_cast<std::size_t>(k)];
    if (id < 0) continue;
    const VehicleState* v = world.find(id);
    if (!v) throw ContractError("push_history: unknown vehicle id " + std::to_string(id));
    s.xy[static_cast<std::size_t>(2 * k)] = v->x;
    s.xy[static_cast<std::size_t>(2 * k + 1)] = v->y;
  }
  steps_.push_back(s);
  if (steps_.size() > static_cast<std::size_t>(kHistorySteps)) steps_.pop_front();
}

void HistoryBuffer::clear() { steps_.clear(); }

int HistoryBuffer::slot_id(int slot) const {
  return steps_.empty() ? -1 : steps_.back().ids[static_cast<std::size_t>(slot)];
}

int HistoryBuffer::slot_of(int id) const {
  if (steps_.empty() || id < 0) return -1;
  const auto& ids = steps_.back().ids;
  const auto it = std::find(ids.begin(), ids.end(), id);
  return it == ids.end() ? -1 : static_cast<int>(it - ids.begin());
}

bool HistoryBuffer::mask(int t, int slot) const {
  const int id = slot_id(slot);
  if (id < 0) return false;
  for (int u = length() - 1; u >= t; --u) {
    if (steps_[static_cast<std::size_t>(u)].ids[static_cast<std::size_t>(slot)] != id) return false;
  }
  return true;
}

std::vector<double> HistoryBuffer::track(int slot, std::array<bool, kHistorySteps>* valid) const {
  std::vector<double> xy(2 * kHistorySteps, 0.0);
  std::array<bool, kHistorySteps> ok{};
  const int pad = kHistorySteps - length();
  for (int t = 0; t < length(); ++t) {
    if (!mask(t, slot)) continue;
    const auto i = static_cast<std::size_t>(pad + t);
    ok[i] = true;
    xy[2 * i] = steps_[static_cast<std::size_t>(t)].xy[static_cast<std::size_t>(2 * slot)];
    xy[2 * i + 1] = steps_[static_cast<std::size_t>(t)].xy[static_cast<std::size_t>(2 * slot + 1)];
  }
  if (valid) *valid = ok;
  return xy;
}

void GridSpec::validate() const {
  if (rows < 1 || cols < 1) throw ConfigError("grid rows and cols must be >= 1");
  if (!(cell_size > 0.0)) throw ConfigError("grid cell_size must be positive");
}

int SemanticGrid::count(CellClass k) const {
  return static_cast<int>(std::count(cells.begin(), cells.end(), static_cast<std::uint8_t>(k)));
}

grad::Tensor SemanticGrid::one_hot() const {
  grad::Tensor t({kGridClasses, spec.rows, spec.cols});
  const std::size_t plane = cells.size();
  for (std::size_t i = 0; i < plane; ++i) t[cells[i] * plane + i] = 1.0;
  return t;
}

void SemanticGrid::write_pgm(std::ostream& os) const {
  os << "P2\n" << spec.cols << ' ' << spec.rows << '\n' << (kGridClasses - 1) << '\n';
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) os << (c ? " " : "") << static_cast<int>(cells[static_cast<std::size_t>(r) * spec.cols + c]);
    os << '\n';
  }
}

namespace {

// Paints `k` into every cell whose center lies strictly inside the rectangle
// given in the ego frame.
void paint_rect(SemanticGrid& g, double cu, double cv, double heading, double length, double width, CellClass k) {
  const GridSpec& s = g.spec;
  const double reach = 0.5 * std::hypot(length, width);
  const double c = std::cos(heading), sn = std::sin(heading);
  // Cell center of (r, col): u = (rows/2 - r - 0.5) s, v = (cols/2 - col - 0.5) s.
  const int r_lo = std::max(0, static_cast<int>(std::floor(0.5 * s.rows - 0.5 - (cu + reach) / s.cell_size)));
  const int r_hi = std::min(s.rows - 1, static_cast<int>(std::ceil(0.5 * s.rows - 0.5 - (cu - reach) / s.cell_size)));
  const int c_lo = std::max(0, static_cast<int>(std::floor(0.5 * s.cols - 0.5 - (cv + reach) / s.cell_size)));
  const int c_hi = std::min(s.cols - 1, static_cast<int>(std::ceil(0.5 * s.cols - 0.5 - (cv - reach) / s.cell_size)));
  for (int r = r_lo; r <= r_hi; ++r) {
    const double u = (0.5 * s.rows - r - 0.5) * s.cell_size - cu;
    for (int col = c_lo; col <= c_hi; ++col) {
      const double v = (0.5 * s.cols - col - 0.5) * s.cell_size - cv;
      const double lu = c * u + sn * v, lv = -sn * u + c * v;
      if (std::abs(lu) < 0.5 * length && std::abs(lv) < 0.5 * width) {
        g.cells[static_cast<std::size_t>(r) * s.cols + col] = static_cast<std::uint8_t>(k);
      }
    }
  }
}

}  // namespace

SemanticGrid render_semantic_grid(const WorldState& world, const GridSpec& spec) {
  spec.validate();
  SemanticGrid g;
  g.spec = spec;
  g.cells.assign(static_cast<std::size_t>(spec.rows) * spec.cols, 0);
  const VehicleState& ego = world.ego();
  const sim::LaneSpec& lanes = world.lanes;
  const double c = std::cos(ego.heading), sn = std::sin(ego.heading);
  const double half = 0.5 * spec.cell_size;

  // The road is an infinite band along x; only lateral position matters.
  for (int r = 0; r < spec.rows; ++r) {
    const double u = (0.5 * spec.rows - r - 0.5) * spec.cell_size;
    for (int col = 0; col < spec.cols; ++col) {
      const double v = (0.5 * spec.cols - col - 0.5) * spec.cell_size;
      const double y = ego.y + sn * u + c * v;
      CellClass k = lanes.on_road(y) ? CellClass::road : CellClass::off_road;
      const double nearest = std::round(y / lanes.lane_width);
      if (nearest >= 0 && nearest <= lanes.lane_count && std::abs(y - nearest * lanes.lane_width) < half) {
        k = CellClass::lane_marking;
      }
      g.cells[static_cast<std::size_t>(r) * spec.cols + col] = static_cast<std::uint8_t>(k);
    }
  }
  for (const VehicleState& v : world.vehicles) {
    if (v.is_ego) continue;
    const Vec2 rel = sim::to_local({v.x, v.y}, {ego.x, ego.y}, ego.heading);
    paint_rect(g, rel.x, rel.y, sim::wrap_angle(v.heading - ego.heading), v.length, v.width, CellClass::npc_vehicle);
  }
  paint_rect(g, 0.0, 0.0, 0.0, ego.length, ego.width, CellClass::ego);
  return g;
}

}  // namespace hppo::percept
