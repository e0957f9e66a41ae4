#include "hppo/agent/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hppo/errors.hpp"
#include "hppo/grad/checkpoint.hpp"

namespace hppo::agent {

using grad::Tape;
using grad::Tensor;
using grad::Var;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::pure: return "pure";
    case Variant::image: return "image";
    case Variant::prediction: return "prediction";
    case Variant::hybrid: return "hybrid";
  }
  return "?";
}

std::string display_name(Variant v) {
  switch (v) {
    case Variant::pure: return "Pure PPO";
    case Variant::image: return "Image-PPO";
    case Variant::prediction: return "Prediction-PPO";
    case Variant::hybrid: return "Hybrid-PPO";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kVariants) {
    if (name == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected pure|image|prediction|hybrid)");
}

bool uses_prediction(Variant v) { return v == Variant::prediction || v == Variant::hybrid; }
bool uses_grid(Variant v) { return v == Variant::image || v == Variant::hybrid; }

int state_width(Variant v) {
  return kCurrentWidth + (uses_prediction(v) ? kPredictionWidth : 0) + (uses_grid(v) ? kGridFeatureWidth : 0);
}

HybridState assemble_state(Variant variant, const PredictionBlock* prediction, const GridFeature* grid_feature,
                           const percept::SensorMatrix* sensors) {
  if (sensors == nullptr) throw ContractError("assemble_state: every variant needs the sensor matrix");
  HybridState s{variant, {}};
  s.values.reserve(static_cast<std::size_t>(state_width(variant)));
  if (uses_prediction(variant)) {
    if (prediction == nullptr) throw ContractError("assemble_state: " + to_string(variant) + " needs a prediction block");
    s.values.insert(s.values.end(), prediction->begin(), prediction->end());
  }
  if (uses_grid(variant)) {
    if (grid_feature == nullptr) throw ContractError("assemble_state: " + to_string(variant) + " needs a grid feature");
    s.values.insert(s.values.end(), grid_feature->begin(), grid_feature->end());
  }
  const std::vector<double> flat = sensors->flat();
  s.values.insert(s.values.end(), flat.begin(), flat.end());
  return s;
}

std::string to_string(AdvantageNorm n) {
  switch (n) {
    case AdvantageNorm::window: return "window";
    case AdvantageNorm::running: return "running";
    case AdvantageNorm::none: return "none";
  }
  return "?";
}

AdvantageNorm parse_advantage_norm(std::string_view name) {
  for (AdvantageNorm n : {AdvantageNorm::window, AdvantageNorm::running, AdvantageNorm::none}) {
    if (name == to_string(n)) return n;
  }
  throw ConfigError("unknown advantage normalization '" + std::string(name) + "' (expected window|running|none)");
}

void AgentConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("agent.gamma must be in (0, 1]");
  if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("agent.clip must be in (0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("agent.lambda must be in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("agent.learning_rate must be > 0");
  if (update_period < 1) throw ConfigError("agent.update_period must be >= 1");
  if (buffer_capacity < update_period) throw ConfigError("agent.buffer_capacity must be >= agent.update_period");
  if (epochs < 1) throw ConfigError("agent.epochs must be >= 1");
  if (value_weight < 0.0 || entropy_weight < 0.0) throw ConfigError("agent loss weights must be >= 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("agent.max_grad_norm must be > 0");
  if (!(reward_scale > 0.0)) throw ConfigError("agent.reward_scale must be > 0");
  if (hidden < 1) throw ConfigError("agent.hidden must be >= 1");
}

// ---------------------------------------------------------------- network

namespace {

// Rough magnitudes of each sensor field, so inputs land near unit range.
constexpr std::array<double, percept::kRowWidth> kRowScale{
    1.0 / 50.0,  // x_rel
    1.0 / 5.0,   // y_rel
    1.0, 1.0,    // sin, cos
    1.0 / 10.0,  // speed
    1.0 / 2.0,   // lane index / offset
    1.0 / 2.0,   // lateral offset in lane
    1.0 / 10.0,  // longitudinal velocity
    1.0 / 2.0,   // lateral velocity
    1.0,         // valid
};

}  // namespace

std::vector<double> ActorCritic::input_scale(Variant variant) {
  std::vector<double> s;
  if (uses_prediction(variant)) {
    for (int i = 0; i < percept::kNeighbors; ++i) {
      s.push_back(kRowScale[percept::kXRel]);
      s.push_back(kRowScale[percept::kYRel]);
    }
  }
  if (uses_grid(variant)) s.insert(s.end(), kGridFeatureWidth, 1.0);
  for (int r = 0; r < percept::kSensorRows; ++r) s.insert(s.end(), kRowScale.begin(), kRowScale.end());
  return s;
}

ActorCritic::ActorCritic(Variant variant, int hidden, const gridenc::EncoderConfig& encoder, Rng& rng)
    : variant_(variant), has_encoder_(uses_grid(variant)) {
  if (hidden < 1) throw ConfigError("policy hidden width must be >= 1");
  if (has_encoder_) encoder_ = gridenc::GridEncoder(encoder, rng);
  const int w = state_width();
  actor1_ = grad::Dense(w, hidden, rng);
  actor2_ = grad::Dense(hidden, hidden, rng);
  actor_out_ = grad::Dense(hidden, kActions, rng);
  // A small policy head starts every state near the uniform distribution.
  for (double& v : actor_out_.weight.data()) v *= 0.01;
  critic1_ = grad::Dense(w, hidden, rng);
  critic2_ = grad::Dense(hidden, hidden, rng);
  critic_out_ = grad::Dense(hidden, 1, rng);
  scale_ = Tensor::row(input_scale(variant));
}

Var ActorCritic::states(Tape& tape, std::span<const Observation> obs) {
  const int b = static_cast<int>(obs.size());
  if (b == 0) throw ContractError("ActorCritic::states: empty batch");
  std::vector<Var> blocks;
  if (uses_prediction(variant_)) {
    Tensor p({b, kPredictionWidth});
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < kPredictionWidth; ++j) p.at(i, j) = obs[static_cast<std::size_t>(i)].prediction[static_cast<std::size_t>(j)];
    }
    blocks.push_back(tape.constant(std::move(p)));
  }
  if (has_encoder_) {
    std::vector<Var> rows;
    rows.reserve(obs.size());
    for (const Observation& o : obs) rows.push_back(encoder_.forward(tape, tape.constant(o.grid.one_hot())));
    blocks.push_back(tape.concat_rows(rows));
  }
  Tensor c({b, kCurrentWidth});
  for (int i = 0; i < b; ++i) {
    const std::vector<double> flat = obs[static_cast<std::size_t>(i)].sensors.flat();
    std::copy(flat.begin(), flat.end(), c.data().begin() + static_cast<std::ptrdiff_t>(i) * kCurrentWidth);
  }
  blocks.push_back(tape.constant(std::move(c)));
  return blocks.size() == 1 ? blocks[0] : tape.concat_cols(blocks);
}

ActorCritic::Batch ActorCritic::forward_states(Tape& tape, Var states) {
  const Tensor& s = tape.value(states);
  if (s.rank() != 2 || s.dim(1) != state_width()) {
    throw ShapeError("policy expects [B x " + std::to_string(state_width()) + "] states, got " +
                     grad::shape_str(s.shape()));
  }
  const Var x = tape.mul_row(states, tape.constant(scale_));
  Var a = tape.tanh(actor1_.forward(tape, x));
  a = tape.tanh(actor2_.forward(tape, a));
  const Var logits = actor_out_.forward(tape, a);
  Var c = tape.tanh(critic1_.forward(tape, x));
  c = tape.tanh(critic2_.forward(tape, c));
  return {tape.log_softmax(logits, 1), critic_out_.forward(tape, c)};
}

namespace {

PolicyOutput read_output(const Tape& tape, const ActorCritic::Batch& out) {
  PolicyOutput r;
  const Tensor& lp = tape.value(out.log_probs);
  for (int a = 0; a < kActions; ++a) r.probs[static_cast<std::size_t>(a)] = std::exp(lp[static_cast<std::size_t>(a)]);
  r.value = tape.value(out.values)[0];
  return r;
}

}  // namespace

PolicyOutput ActorCritic::policy_value(const HybridState& s) const {
  if (static_cast<int>(s.values.size()) != state_width()) {
    throw ShapeError("policy expects a " + std::to_string(state_width()) + "-wide state, got " +
                     std::to_string(s.values.size()));
  }
  Tape tape;
  // Inference only; parameters are bound but never written.
  auto* self = const_cast<ActorCritic*>(this);
  const Batch out = self->forward_states(tape, tape.constant(Tensor({1, state_width()}, s.values)));
  return read_output(tape, out);
}

PolicyOutput ActorCritic::evaluate(const Observation& obs) const {
  Tape tape;
  auto* self = const_cast<ActorCritic*>(this);
  const Batch out = self->forward(tape, std::span<const Observation>(&obs, 1));
  return read_output(tape, out);
}

HybridState ActorCritic::state_of(const Observation& obs) const {
  GridFeature g{};
  if (has_encoder_) g = encoder_.encode(obs.grid);
  return assemble_state(variant_, &obs.prediction, &g, &obs.sensors);
}

std::vector<grad::ParamRef> ActorCritic::params() {
  std::vector<grad::ParamRef> out;
  if (has_encoder_) out = encoder_.params();
  actor1_.collect("actor.l1", out);
  actor2_.collect("actor.l2", out);
  actor_out_.collect("actor.out", out);
  critic1_.collect("critic.l1", out);
  critic2_.collect("critic.l2", out);
  critic_out_.collect("critic.out", out);
  return out;
}

std::map<std::string, std::string> ActorCritic::meta() const {
  std::map<std::string, std::string> m{{"kind", "policy"},
                                       {"variant", to_string(variant_)},
                                       {"hidden", std::to_string(actor1_.out_features())},
                                       {"state_width", std::to_string(state_width())}};
  if (has_encoder_) m.merge(encoder_.meta());
  return m;
}

void save_policy(const std::string& path, ActorCritic& net) { grad::save_checkpoint(path, net.params(), net.meta()); }

ActorCritic load_policy(const std::string& path) {
  const grad::Checkpoint ck = grad::read_checkpoint(path);
  auto get = [&](const char* key) {
    const auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw IoError(path + ": not a policy checkpoint (missing '" + key + "')");
    return it->second;
  };
  if (get("kind") != "policy") throw IoError(path + ": not a policy checkpoint");
  const Variant v = parse_variant(get("variant"));
  gridenc::EncoderConfig enc;
  if (uses_grid(v)) enc = gridenc::GridEncoder::config_from_meta(ck.meta);
  Rng rng(0);
  ActorCritic net(v, std::stoi(get("hidden")), enc, rng);
  grad::load_into(ck, net.params());
  return net;
}

// ---------------------------------------------------------------- sampling

Sampled sample_action(const std::array<double, kActions>& probs, Rng& rng, bool greedy) {
  int a = 0;
  if (greedy) {
    for (int i = 1; i < kActions; ++i) {
      if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(a)]) a = i;
    }
  } else {
    const double u = uniform01(rng);
    double cum = 0.0;
    a = -1;
    for (int i = 0; i < kActions; ++i) {
      cum += probs[static_cast<std::size_t>(i)];
      if (u < cum) {
        a = i;
        break;
      }
    }
    if (a < 0) {
      // Rounding left the total just below u; take the last supported action.
      for (int i = kActions - 1; i >= 0; --i) {
        if (probs[static_cast<std::size_t>(i)] > 0.0) {
          a = i;
          break;
        }
      }
    }
  }
  return {a, std::log(probs[static_cast<std::size_t>(a)])};
}

// ---------------------------------------------------------------- buffer

RolloutBuffer::RolloutBuffer(int capacity) : capacity_(static_cast<std::size_t>(capacity)) {
  if (capacity < 1) throw ConfigError("rollout buffer capacity must be >= 1");
}

void RolloutBuffer::push(Transition t) {
  if (t.log_prob > 0.0) throw ContractError("transition log_prob must be <= 0");
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<Transition> RolloutBuffer::last(std::size_t n) const {
  if (n > items_.size()) throw ContractError("rollout buffer holds fewer transitions than requested");
  return {items_.end() - static_cast<std::ptrdiff_t>(n), items_.end()};
}

// ---------------------------------------------------------------- advantages

Advantages gae_advantages(std::span<const double> rewards, std::span<const double> values,
                          std::span<const std::uint8_t> done, double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (n == 0) throw ContractError("gae_advantages: empty window");
  if (values.size() != n || done.size() != n) throw ShapeError("gae_advantages: rewards, values and done differ in length");
  Advantages out;
  out.raw.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 == n ? bootstrap : values[i + 1];
    const double live = done[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.raw[i] = next_adv;
  }
  const double mean = std::accumulate(out.raw.begin(), out.raw.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double a : out.raw) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  out.normalized.resize(n);
  out.returns.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.normalized[i] = (out.raw[i] - mean) / (sd + 1e-8);
    out.returns[i] = out.raw[i] + values[i];
  }
  return out;
}

void AdvantageScaler::observe(std::span<const double> raw) {
  for (double a : raw) sum_sq += a * a;
  count += static_cast<double>(raw.size());
}

double AdvantageScaler::rms() const { return count > 0.0 ? std::sqrt(sum_sq / count) : 1.0; }

double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

// ---------------------------------------------------------------- update

UpdateDiagnostics ppo_update(ActorCritic& net, grad::OptimizerState& opt, const std::vector<Transition>& window,
                             const AgentConfig& cfg, AdvantageScaler* scaler) {
  if (window.empty()) throw ContractError("ppo_update: empty window");
  const int b = static_cast<int>(window.size());
  std::vector<Observation> obs;
  std::vector<int> actions;
  std::vector<double> rewards, values;
  std::vector<std::uint8_t> done;
  obs.reserve(window.size());
  for (const Transition& t : window) {
    obs.push_back(t.state);
    actions.push_back(t.action);
    rewards.push_back(t.reward * cfg.reward_scale);
    values.push_back(t.value);
    done.push_back(t.done ? 1 : 0);
  }
  const double bootstrap = window.back().done ? 0.0 : net.evaluate(window.back().next_state).value;
  const Advantages adv = gae_advantages(rewards, values, done, bootstrap, cfg.gamma, cfg.lambda);

  // θ_old: the log-probabilities of the network as it stands on entry.
  std::vector<double> old_lp(window.size());
  {
    Tape tape;
    const auto out = net.forward(tape, obs);
    const Tensor& lp = tape.value(out.log_probs);
    for (int i = 0; i < b; ++i) old_lp[static_cast<std::size_t>(i)] = lp.at(i, actions[static_cast<std::size_t>(i)]);
  }

  const Tensor old_t({b, 1}, old_lp);
  std::vector<double> scaled = adv.normalized;
  if (cfg.advantage_norm != AdvantageNorm::window) {
    double div = 1.0;
    if (cfg.advantage_norm == AdvantageNorm::running) {
      AdvantageScaler local;
      AdvantageScaler& sc = scaler ? *scaler : local;
      sc.observe(adv.raw);
      div = sc.rms() + 1e-8;
    }
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = adv.raw[i] / div;
  }
  const Tensor adv_t({b, 1}, scaled);
  const Tensor ret_t({b, 1}, adv.returns);
  const auto params = net.params();
  // Policy-side (actor and encoder) and critic gradients are clipped apart so
  // a large value error cannot shrink the policy step.
  std::vector<grad::ParamRef> policy_side, critic_side;
  for (const auto& p : params) (p.name.rfind("critic.", 0) == 0 ? critic_side : policy_side).push_back(p);
  opt.config.learning_rate = cfg.learning_rate;
  UpdateDiagnostics d;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape tape;
    const auto out = net.forward(tape, obs);
    const Var lp = tape.gather_cols(out.log_probs, actions);
    const Var ratio = tape.exp(tape.sub(lp, tape.constant(old_t)));
    const Var a = tape.constant(adv_t);
    const Var unclipped = tape.mul(ratio, a);
    const Var clipped = tape.mul(tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), a);
    const Var term = tape.minimum(unclipped, clipped);
    const Var surrogate = tape.mean(term);
    const Var value_loss = tape.mean(tape.square(tape.sub(out.values, tape.constant(ret_t))));
    const Var entropy =
        tape.scale(tape.sum(tape.mul(tape.exp(out.log_probs), out.log_probs)), -1.0 / static_cast<double>(b));
    const Var loss = tape.add(tape.sub(tape.scale(value_loss, cfg.value_weight), surrogate),
                              tape.scale(entropy, -cfg.entropy_weight));

    int clipped_count = 0;
    double kl = 0.0;
    for (int i = 0; i < b; ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      const double r = tape.value(ratio)[k];
      if (std::abs(r - 1.0) > cfg.clip) ++clipped_count;
      if (tape.value(term)[k] > tape.value(unclipped)[k]) ++d.min_property_violations;
      kl += old_lp[k] - tape.value(lp)[k];
    }
    d.surrogate = tape.value(surrogate).item();
    d.value_loss = tape.value(value_loss).item();
    d.entropy = tape.value(entropy).item();
    d.clip_fraction = static_cast<double>(clipped_count) / b;
    d.approx_kl = kl / b;

    grad::zero_grads(params);
    tape.backward(loss);
    d.grad_norm = grad::clip_grad_norm(policy_side, cfg.max_grad_norm);
    grad::clip_grad_norm(critic_side, cfg.max_grad_norm);
    grad::adam_step(params, opt);
  }
  return d;
}

// ---------------------------------------------------------------- agent

Agent::Agent(Variant variant, const AgentConfig& cfg, const gridenc::EncoderConfig& encoder, std::uint64_t seed)
    : cfg_(cfg), buffer_(cfg.buffer_capacity), rng_(derive_seed(seed, 2)) {
  cfg.validate();
  Rng init(derive_seed(seed, 1));
  net_ = ActorCritic(variant, cfg.hidden, encoder, init);
  opt_.config.learning_rate = cfg.learning_rate;
}

Agent::Agent(ActorCritic net, const AgentConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), net_(std::move(net)), buffer_(cfg.buffer_capacity), rng_(derive_seed(seed, 2)) {
  cfg.validate();
  opt_.config.learning_rate = cfg.learning_rate;
}

Agent::Act Agent::act(const Observation& obs, bool greedy) {
  Act r;
  r.output = net_.evaluate(obs);
  r.sample = sample_action(r.output.probs, rng_, greedy);
  return r;
}

std::optional<UpdateDiagnostics> Agent::record(Transition t) {
  buffer_.push(std::move(t));
  ++decisions_;
  if (decisions_ % cfg_.update_period != 0) return std::nullopt;
  ++updates_;
  return ppo_update(net_, opt_, buffer_.last(static_cast<std::size_t>(cfg_.update_period)), cfg_, &scaler_);
}

}  // namespace hppo::agent
