#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hppo/grad/adam.hpp"
#include "hppo/grad/nn.hpp"
#include "hppo/grad/tape.hpp"
#include "hppo/gridenc/gridenc.hpp"
#include "hppo/percept/percept.hpp"
#include "hppo/rng.hpp"

namespace hppo::agent {

enum class Variant { pure, image, prediction, hybrid };

inline constexpr std::array<Variant, 4> kVariants{Variant::pure, Variant::image, Variant::prediction,
                                                  Variant::hybrid};

inline constexpr int kPredictionWidth = 2 * percept::kNeighbors;
inline constexpr int kGridFeatureWidth = gridenc::kFeatureWidth;
inline constexpr int kCurrentWidth = percept::kSensorWidth;
inline constexpr int kActions = 3;

std::string to_string(Variant v);
/// Table-style name, e.g. "Hybrid-PPO".
std::string display_name(Variant v);
Variant parse_variant(std::string_view name);
bool uses_prediction(Variant v);
bool uses_grid(Variant v);
int state_width(Variant v);

using PredictionBlock = std::array<double, kPredictionWidth>;
using GridFeature = std::array<double, kGridFeatureWidth>;

struct HybridState {
  Variant variant = Variant::pure;
  std::vector<double> values;
};

/// Concatenates [prediction | grid | current], omitting blocks the variant
/// does not use. Throws ContractError when a required block is null.
HybridState assemble_state(Variant variant, const PredictionBlock* prediction, const GridFeature* grid_feature,
                           const percept::SensorMatrix* sensors);

/// Raw inputs for one decision. The grid stays raw so the encoder can be
/// trained through the policy losses.
struct Observation {
  PredictionBlock prediction{};
  percept::SemanticGrid grid;
  percept::SensorMatrix sensors;
};

/// How advantages are scaled before the surrogate: per window (zero mean,
/// unit variance), by the running RMS of every advantage seen so far, or not.
enum class AdvantageNorm { window, running, none };

std::string to_string(AdvantageNorm n);
AdvantageNorm parse_advantage_norm(std::string_view name);

struct AgentConfig {
  double gamma = 0.99;
  double clip = 0.2;
  double lambda = 0.95;
  double learning_rate = 3e-4;
  int buffer_capacity = 2048;
  int update_period = 8;
  int epochs = 4;
  double value_weight = 0.5;
  double entropy_weight = 0.01;
  double max_grad_norm = 0.5;
  double reward_scale = 0.01;  ///< applied to accrued rewards before advantages
  AdvantageNorm advantage_norm = AdvantageNorm::running;
  int hidden = 128;

  void validate() const;
};

struct PolicyOutput {
  std::array<double, kActions> probs{};
  double value = 0.0;
};

/// Separate tanh MLP actor and critic over the variant's state; image and
/// hybrid variants own a grid encoder shared by both heads.
class ActorCritic {
 public:
  struct Batch {
    grad::Var log_probs;  ///< [B x 3]
    grad::Var values;     ///< [B x 1]
  };

  ActorCritic() = default;
  ActorCritic(Variant variant, int hidden, const gridenc::EncoderConfig& encoder, Rng& rng);

  Variant variant() const { return variant_; }
  int state_width() const { return agent::state_width(variant_); }
  bool has_encoder() const { return has_encoder_; }
  const gridenc::GridEncoder& encoder() const { return encoder_; }

  /// Per-element input scale folded into the first layer's input.
  static std::vector<double> input_scale(Variant variant);

  grad::Var states(grad::Tape& tape, std::span<const Observation> obs);
  Batch forward_states(grad::Tape& tape, grad::Var states);
  Batch forward(grad::Tape& tape, std::span<const Observation> obs) { return forward_states(tape, states(tape, obs)); }

  /// Throws ShapeError when the state width does not match the network.
  PolicyOutput policy_value(const HybridState& s) const;
  PolicyOutput evaluate(const Observation& obs) const;
  HybridState state_of(const Observation& obs) const;

  std::vector<grad::ParamRef> params();
  std::map<std::string, std::string> meta() const;

 private:
  Variant variant_ = Variant::pure;
  bool has_encoder_ = false;
  gridenc::GridEncoder encoder_;
  grad::Dense actor1_, actor2_, actor_out_;
  grad::Dense critic1_, critic2_, critic_out_;
  grad::Tensor scale_;
};

void save_policy(const std::string& path, ActorCritic& net);
ActorCritic load_policy(const std::string& path);

struct Sampled {
  int action = 1;
  double log_prob = 0.0;
};

/// Stochastic draw, or argmax with ties to the lower index when greedy.
Sampled sample_action(const std::array<double, kActions>& probs, Rng& rng, bool greedy);

struct Transition {
  Observation state;
  int action = 1;
  double reward = 0.0;  ///< raw accrued reward of the maneuver
  Observation next_state;
  bool done = false;
  double log_prob = 0.0;
  double value = 0.0;  ///< critic estimate at decision time
};

/// Bounded FIFO; the oldest transition drops when full.
class RolloutBuffer {
 public:
  explicit RolloutBuffer(int capacity = 2048);
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// Copies of the newest `n` transitions, oldest first.
  std::vector<Transition> last(std::size_t n) const;
  void clear() { items_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

struct Advantages {
  std::vector<double> raw;
  std::vector<double> normalized;
  std::vector<double> returns;  ///< raw + values
};

/// Generalized advantage estimation. done[t] cuts both the bootstrap and
/// the recursion; `bootstrap` is the value after the last step.
Advantages gae_advantages(std::span<const double> rewards, std::span<const double> values,
                          std::span<const std::uint8_t> done, double bootstrap, double gamma, double lambda);

/// min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv).
double clipped_surrogate(double ratio, double advantage, double eps);

struct UpdateDiagnostics {
  double surrogate = 0.0;  ///< mean clipped objective, last epoch
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;  ///< policy-side norm before clipping
  int min_property_violations = 0;  ///< clipped > unclipped occurrences, all epochs
};

/// Running root-mean-square of raw advantages across windows.
struct AdvantageScaler {
  double count = 0.0;
  double sum_sq = 0.0;

  void observe(std::span<const double> raw);
  double rms() const;
};

/// Clipped-surrogate update over one window. The critic supplies the
/// bootstrap unless the last transition is terminal. θ_old is the network
/// as it stands on entry.
UpdateDiagnostics ppo_update(ActorCritic& net, grad::OptimizerState& opt, const std::vector<Transition>& window,
                             const AgentConfig& cfg, AdvantageScaler* scaler = nullptr);

/// Actor-critic, optimizer, buffer and the decision counter that triggers
/// an update every `update_period` decisions.
class Agent {
 public:
  Agent(Variant variant, const AgentConfig& cfg, const gridenc::EncoderConfig& encoder, std::uint64_t seed);
  Agent(ActorCritic net, const AgentConfig& cfg, std::uint64_t seed);

  struct Act {
    Sampled sample;
    PolicyOutput output;
  };
  Act act(const Observation& obs, bool greedy);

  /// Stores the transition; returns diagnostics when it completed a window.
  std::optional<UpdateDiagnostics> record(Transition t);

  ActorCritic& net() { return net_; }
  const AgentConfig& config() const { return cfg_; }
  std::int64_t decisions() const { return decisions_; }
  std::int64_t updates() const { return updates_; }
  const RolloutBuffer& buffer() const { return buffer_; }

 private:
  AgentConfig cfg_;
  ActorCritic net_;
  grad::OptimizerState opt_;
  RolloutBuffer buffer_;
  AdvantageScaler scaler_;
  Rng rng_;
  std::int64_t decisions_ = 0;
  std::int64_t updates_ = 0;
};

}  // namespace hppo::agent
