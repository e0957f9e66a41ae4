#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <ostream>
#include <vector>

#include "hppo/grad/tensor.hpp"
#include "hppo/sim/types.hpp"

namespace hppo::percept {

inline constexpr int kNeighbors = 8;
inline constexpr int kRowWidth = 10;
inline constexpr int kSensorRows = kNeighbors + 1;
inline constexpr int kSensorWidth = kSensorRows * kRowWidth;
inline constexpr int kHistorySteps = 10;

/// Field order of one sensor row.
enum SensorField {
  kXRel,
  kYRel,
  kSinHeading,
  kCosHeading,
  kSpeed,
  kLaneOffset,
  kLateralInLane,
  kLonVelocity,
  kLatVelocity,
  kValid,
};

using SensorRow = std::array<double, kRowWidth>;

/// Row 0 is the ego in road terms: zero position, heading relative to the
/// road, absolute lane index, road-frame velocity. Rows 1..8 are neighbors
/// in the ego frame (forward +x, left +y) with relative velocity, sorted by
/// distance; missing neighbors are all-zero rows.
struct SensorMatrix {
  std::array<SensorRow, kSensorRows> rows{};
  std::array<int, kNeighbors> ids{};  ///< -1 for padding rows

  std::vector<double> flat() const;
  bool operator==(const SensorMatrix&) const = default;
};

/// Non-ego vehicle ids by distance to the ego, ties to the lower id, at most k.
std::vector<int> nearest_neighbors(const sim::WorldState& world, int k = kNeighbors);

SensorMatrix sensor_rows(const sim::WorldState& world, const std::vector<int>& neighbor_ids);

/// Last ten steps of neighbor positions in stable slots. A slot keeps its id
/// for as long as that id stays among the tracked neighbors; a newly
/// tracked id takes the lowest free slot and its older steps are masked.
class HistoryBuffer {
 public:
  struct Step {
    std::array<int, kNeighbors> ids;            ///< -1 when the slot is empty
    std::array<double, 2 * kNeighbors> xy{};    ///< world positions
  };

  void push(const sim::WorldState& world, const std::vector<int>& neighbor_ids);
  void clear();

  int length() const { return static_cast<int>(steps_.size()); }
  const Step& step(int t) const { return steps_[static_cast<std::size_t>(t)]; }
  /// Id currently tracked in `slot`, or -1.
  int slot_id(int slot) const;
  /// Slot currently tracking `id`, or -1.
  int slot_of(int id) const;
  /// True iff step t (0 = oldest) belongs to the current occupant's
  /// unbroken run in `slot`.
  bool mask(int t, int slot) const;
  /// Valid steps of `slot` as (x, y) in world coordinates, oldest first,
  /// padded to kHistorySteps at the front with zeros; `valid` receives the mask.
  std::vector<double> track(int slot, std::array<bool, kHistorySteps>* valid) const;

 private:
  std::deque<Step> steps_;
};

enum class CellClass : std::uint8_t { off_road = 0, road = 1, lane_marking = 2, npc_vehicle = 3, ego = 4 };
inline constexpr int kGridClasses = 5;

struct GridSpec {
  int rows = 64;
  int cols = 64;
  double cell_size = 0.5;  ///< m

  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

/// Ego-centered raster, rotated with the ego: row 0 is farthest ahead,
/// column 0 farthest left. Stored as class indices.
struct SemanticGrid {
  GridSpec spec;
  std::vector<std::uint8_t> cells;

  CellClass at(int r, int c) const { return static_cast<CellClass>(cells[static_cast<std::size_t>(r) * spec.cols + c]); }
  int count(CellClass k) const;
  /// One-hot tensor [classes x rows x cols].
  grad::Tensor one_hot() const;
  /// Plain-text portable graymap, one class index per cell.
  void write_pgm(std::ostream& os) const;
  bool operator==(const SemanticGrid&) const = default;
};

SemanticGrid render_semantic_grid(const sim::WorldState& world, const GridSpec& spec);

}  // namespace hppo::percept
