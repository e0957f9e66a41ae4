#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hppo/grad/nn.hpp"
#include "hppo/grad/tape.hpp"
#include "hppo/rng.hpp"
#include "hppo/sim/types.hpp"

namespace hppo::forecast {

inline constexpr int kSteps = 10;         ///< history and future length
inline constexpr int kFlat = 2 * kSteps;  ///< (x, y) per step

using Track = std::array<double, kFlat>;
using StepMask = std::array<bool, kSteps>;

/// One history/future window in a frame translated to the last observed
/// position, so history ends at (0, 0). Masked history steps are zero.
struct TrajectorySample {
  Track history{};
  Track future{};
  StepMask mask{};
  int source_id = -1;
  int t0 = 0;  ///< sample index of the first history step

  bool operator==(const TrajectorySample&) const = default;
};

struct PredictionMetrics {
  double mad = 0.0;
  double fad = 0.0;
  std::size_t count = 0;
};

/// Mean and final displacement between two flattened T x 2 sequences.
PredictionMetrics mad_fad(std::span<const double> pred, std::span<const double> truth);

/// Shifts a world-frame history so its last valid step sits at the origin.
/// Returns the anchor (the last valid position); zeros when nothing is valid.
std::array<double, 2> localize(Track& xy, const StepMask& mask);

struct PredictorConfig {
  int embed_dim = 32;
  int heads = 2;
  int layers = 2;
  int ffn_dim = 64;
  double io_scale = 0.1;  ///< meters -> network units

  void validate() const;
  int key_dim() const { return embed_dim / heads; }
  bool operator==(const PredictorConfig&) const = default;
};

/// Pre-norm encoder-only transformer over one vehicle's history tokens,
/// masked mean pooling, and a dense head producing ten future offsets.
class Predictor {
 public:
  Predictor() = default;
  Predictor(const PredictorConfig& cfg, Rng& rng);

  const PredictorConfig& config() const { return cfg_; }

  /// Future offsets in meters, [batch x 20], for localized samples.
  grad::Var forward(grad::Tape& tape, std::span<const Track> histories, std::span<const StepMask> masks);

  /// Inference on world-frame histories. Returns world-frame futures;
  /// neighbors without a valid step yield zeros.
  std::vector<Track> predict_future(std::span<const Track> world_histories, std::span<const StepMask> masks) const;

  std::vector<grad::ParamRef> params();
  std::map<std::string, std::string> meta() const;
  static PredictorConfig config_from_meta(const std::map<std::string, std::string>& meta);

 private:
  struct Block {
    grad::Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    grad::Dense query, key, value, out, ffn_in, ffn_out;
  };

  PredictorConfig cfg_;
  grad::Dense embed_;
  std::vector<Block> blocks_;
  grad::Tensor final_gain_, final_bias_;
  grad::Dense head_;
};

void save_predictor(const std::string& path, Predictor& model);
Predictor load_predictor(const std::string& path);

/// Drives `vehicles` surrounding vehicles (the ego stays parked behind the
/// traffic) and cuts every vehicle's track into stride-1 windows of ten
/// history and ten future samples. `rate_hz` sets the sampling stride in
/// simulator steps, never finer than one step.
std::vector<TrajectorySample> collect_dataset(const sim::ScenarioConfig& scenario, std::uint64_t seed, int vehicles,
                                              double rate_hz, int steps);

/// Every stride-1 window of one vehicle's sampled (x, y) track, localized.
std::vector<TrajectorySample> extract_windows(const std::vector<double>& track_xy, int source_id);

/// Straight-line motion with random velocity, for training sanity checks.
std::vector<TrajectorySample> constant_velocity_dataset(int count, Rng& rng, double max_speed = 1.5);

void write_dataset(std::ostream& os, const std::vector<TrajectorySample>& samples);
std::vector<TrajectorySample> read_dataset(std::istream& is);

struct PredictorHyper {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double validation_fraction = 0.2;
  double prefix_mask_prob = 0.0;  ///< chance to hide a random history prefix
  std::uint64_t seed = 0;
  double max_seconds = 0.0;  ///< wall-clock cap, 0 = none

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  PredictionMetrics validation;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  PredictionMetrics best;
};

/// Minimizes mean squared displacement and leaves the best-validation
/// parameters in `model`.
TrainReport train_predictor(Predictor& model, const std::vector<TrajectorySample>& dataset, const PredictorHyper& hyper);

PredictionMetrics evaluate_predictor(Predictor& model, std::span<const TrajectorySample> samples);

}  // namespace hppo::forecast
