#include "hppo/forecast/forecast.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "hppo/errors.hpp"
#include "hppo/grad/adam.hpp"
#include "hppo/grad/checkpoint.hpp"
#include "hppo/sim/world.hpp"
#include "json.hpp"

namespace hppo::forecast {

using grad::Tape;
using grad::Tensor;
using grad::Var;

PredictionMetrics mad_fad(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty() || pred.size() % 2 != 0) {
    throw ShapeError("mad_fad needs equal non-empty T x 2 sequences, got " + std::to_string(pred.size()) + " and " +
                     std::to_string(truth.size()) + " values");
  }
  const std::size_t steps = pred.size() / 2;
  PredictionMetrics m;
  for (std::size_t t = 0; t < steps; ++t) {
    const double d = std::hypot(pred[2 * t] - truth[2 * t], pred[2 * t + 1] - truth[2 * t + 1]);
    m.mad += d;
    if (t + 1 == steps) m.fad = d;
  }
  m.mad /= static_cast<double>(steps);
  m.count = 1;
  return m;
}

std::array<double, 2> localize(Track& xy, const StepMask& mask) {
  int last = -1;
  for (int t = kSteps - 1; t >= 0; --t) {
    if (mask[static_cast<std::size_t>(t)]) {
      last = t;
      break;
    }
  }
  if (last < 0) {
    xy.fill(0.0);
    return {0.0, 0.0};
  }
  const std::array<double, 2> anchor{xy[static_cast<std::size_t>(2 * last)], xy[static_cast<std::size_t>(2 * last + 1)]};
  for (int t = 0; t < kSteps; ++t) {
    const auto i = static_cast<std::size_t>(2 * t);
    if (mask[static_cast<std::size_t>(t)]) {
      xy[i] -= anchor[0];
      xy[i + 1] -= anchor[1];
    } else {
      xy[i] = xy[i + 1] = 0.0;
    }
  }
  return anchor;
}

void PredictorConfig::validate() const {
  if (embed_dim < 1 || heads < 1 || layers < 1 || ffn_dim < 1) throw ConfigError("predictor sizes must be >= 1");
  if (embed_dim % heads != 0) throw ConfigError("predictor embed_dim must be divisible by heads");
  if (!(io_scale > 0.0)) throw ConfigError("predictor io_scale must be positive");
}

Predictor::Predictor(const PredictorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int d = cfg.embed_dim;
  embed_ = grad::Dense(2, d, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    Block b;
    b.ln1_gain = Tensor({d}, 1.0);
    b.ln1_bias = Tensor({d});
    b.ln2_gain = Tensor({d}, 1.0);
    b.ln2_bias = Tensor({d});
    b.query = grad::Dense(d, d, rng);
    b.key = grad::Dense(d, d, rng);
    b.value = grad::Dense(d, d, rng);
    b.out = grad::Dense(d, d, rng);
    b.ffn_in = grad::Dense(d, cfg.ffn_dim, rng);
    b.ffn_out = grad::Dense(cfg.ffn_dim, d, rng);
    blocks_.push_back(std::move(b));
  }
  final_gain_ = Tensor({d}, 1.0);
  final_bias_ = Tensor({d});
  head_ = grad::Dense(d, kFlat, rng);
}

namespace {

Tensor positional_encoding(int batch, int dim) {
  Tensor pe({batch * kSteps, dim});
  for (int t = 0; t < kSteps; ++t) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      const double v = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
      for (int b = 0; b < batch; ++b) pe.at(b * kSteps + t, i) = v;
    }
  }
  return pe;
}

}  // namespace

Var Predictor::forward(Tape& tape, std::span<const Track> histories, std::span<const StepMask> masks) {
  if (histories.size() != masks.size() || histories.empty()) {
    throw ShapeError("predictor needs one mask per history and a non-empty batch");
  }
  const int batch = static_cast<int>(histories.size());
  const int d = cfg_.embed_dim;
  Tensor tokens({batch * kSteps, 2});
  std::vector<std::uint8_t> key_mask(static_cast<std::size_t>(batch * kSteps));
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < kSteps; ++t) {
      const bool ok = masks[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
      key_mask[static_cast<std::size_t>(b * kSteps + t)] = ok;
      if (!ok) continue;
      tokens.at(b * kSteps + t, 0) = histories[static_cast<std::size_t>(b)][static_cast<std::size_t>(2 * t)] * cfg_.io_scale;
      tokens.at(b * kSteps + t, 1) = histories[static_cast<std::size_t>(b)][static_cast<std::size_t>(2 * t + 1)] * cfg_.io_scale;
    }
  }
  auto norm = [&](Var x, Tensor& gain, Tensor& bias) {
    return tape.add_row(tape.mul_row(tape.layer_norm_rows(x), tape.param(gain)), tape.param(bias));
  };
  Var h = tape.add(embed_.forward(tape, tape.constant(std::move(tokens))), tape.constant(positional_encoding(batch, d)));
  for (Block& blk : blocks_) {
    const Var a = norm(h, blk.ln1_gain, blk.ln1_bias);
    const Var att = tape.attention(blk.query.forward(tape, a), blk.key.forward(tape, a), blk.value.forward(tape, a),
                                   cfg_.heads, batch, key_mask);
    h = tape.add(h, blk.out.forward(tape, att));
    const Var f = norm(h, blk.ln2_gain, blk.ln2_bias);
    h = tape.add(h, blk.ffn_out.forward(tape, tape.relu(blk.ffn_in.forward(tape, f))));
  }
  const Var pooled = tape.group_mean_rows(norm(h, final_gain_, final_bias_), kSteps, key_mask);
  return tape.scale(head_.forward(tape, pooled), 1.0 / cfg_.io_scale);
}

std::vector<Track> Predictor::predict_future(std::span<const Track> world_histories,
                                             std::span<const StepMask> masks) const {
  if (world_histories.size() != masks.size()) throw ShapeError("predict_future needs one mask per history");
  std::vector<Track> out(world_histories.size(), Track{});
  std::vector<Track> local;
  std::vector<StepMask> local_masks;
  std::vector<std::array<double, 2>> anchors;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < world_histories.size(); ++i) {
    if (std::none_of(masks[i].begin(), masks[i].end(), [](bool b) { return b; })) continue;
    Track xy = world_histories[i];
    anchors.push_back(localize(xy, masks[i]));
    local.push_back(xy);
    local_masks.push_back(masks[i]);
    where.push_back(i);
  }
  if (local.empty()) return out;
  // Inference never calls backward, so the parameters are only read.
  Tape tape;
  const Var y = const_cast<Predictor*>(this)->forward(tape, local, local_masks);
  const Tensor& pred = tape.value(y);
  for (std::size_t j = 0; j < where.size(); ++j) {
    Track& dst = out[where[j]];
    for (int t = 0; t < kSteps; ++t) {
      dst[static_cast<std::size_t>(2 * t)] = pred.at(static_cast<int>(j), 2 * t) + anchors[j][0];
      dst[static_cast<std::size_t>(2 * t + 1)] = pred.at(static_cast<int>(j), 2 * t + 1) + anchors[j][1];
    }
  }
  return out;
}

std::vector<grad::ParamRef> Predictor::params() {
  std::vector<grad::ParamRef> out;
  embed_.collect("predictor.embed", out);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Block& b = blocks_[l];
    const std::string p = "predictor.block" + std::to_string(l);
    out.push_back({p + ".ln1.gain", &b.ln1_gain});
    out.push_back({p + ".ln1.bias", &b.ln1_bias});
    b.query.collect(p + ".query", out);
    b.key.collect(p + ".key", out);
    b.value.collect(p + ".value", out);
    b.out.collect(p + ".out", out);
    out.push_back({p + ".ln2.gain", &b.ln2_gain});
    out.push_back({p + ".ln2.bias", &b.ln2_bias});
    b.ffn_in.collect(p + ".ffn_in", out);
    b.ffn_out.collect(p + ".ffn_out", out);
  }
  out.push_back({"predictor.final.gain", &final_gain_});
  out.push_back({"predictor.final.bias", &final_bias_});
  head_.collect("predictor.head", out);
  return out;
}

std::map<std::string, std::string> Predictor::meta() const {
  return {{"kind", "predictor"},
          {"embed_dim", std::to_string(cfg_.embed_dim)},
          {"heads", std::to_string(cfg_.heads)},
          {"layers", std::to_string(cfg_.layers)},
          {"ffn_dim", std::to_string(cfg_.ffn_dim)},
          {"io_scale", std::to_string(cfg_.io_scale)}};
}

PredictorConfig Predictor::config_from_meta(const std::map<std::string, std::string>& meta) {
  auto get = [&](const char* key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw IoError(std::string("predictor checkpoint lacks meta '") + key + "'");
    return it->second;
  };
  if (get("kind") != "predictor") throw IoError("checkpoint is not a predictor");
  PredictorConfig c;
  c.embed_dim = std::stoi(get("embed_dim"));
  c.heads = std::stoi(get("heads"));
  c.layers = std::stoi(get("layers"));
  c.ffn_dim = std::stoi(get("ffn_dim"));
  c.io_scale = std::stod(get("io_scale"));
  return c;
}

void save_predictor(const std::string& path, Predictor& model) {
  grad::save_checkpoint(path, model.params(), model.meta());
}

Predictor load_predictor(const std::string& path) {
  const grad::Checkpoint ck = grad::read_checkpoint(path);
  Rng rng(0);
  Predictor model(Predictor::config_from_meta(ck.meta), rng);
  grad::load_into(ck, model.params());
  return model;
}

std::vector<TrajectorySample> collect_dataset(const sim::ScenarioConfig& scenario, std::uint64_t seed, int vehicles,
                                              double rate_hz, int steps) {
  if (steps < 2 * kSteps) {
    throw ContractError("collect_dataset needs steps >= " + std::to_string(2 * kSteps) + ", got " +
                        std::to_string(steps));
  }
  if (vehicles < 1 || !(rate_hz > 0.0)) throw ContractError("collect_dataset needs vehicles >= 1 and rate_hz > 0");
  sim::ScenarioConfig sc = scenario;
  sc.npc_count = vehicles;
  const int stride = std::max(1, static_cast<int>(std::lround(1.0 / (rate_hz * sc.dt))));
  sc.max_episode_steps = steps * stride + 1;
  sim::WorldState world = sim::reset(sc, seed);

  // tracks[v] holds the (x, y) of vehicle v at every sample.
  std::vector<std::vector<double>> tracks(world.vehicles.size());
  auto record = [&] {
    for (std::size_t v = 0; v < world.vehicles.size(); ++v) {
      tracks[v].push_back(world.vehicles[v].x);
      tracks[v].push_back(world.vehicles[v].y);
    }
  };
  record();
  for (int s = 1; s < steps; ++s) {
    for (int k = 0; k < stride; ++k) sim::step(world, {});
    record();
  }

  std::vector<TrajectorySample> out;
  for (std::size_t v = 0; v < world.vehicles.size(); ++v) {
    if (world.vehicles[v].is_ego) continue;
    const auto windows = extract_windows(tracks[v], world.vehicles[v].id);
    out.insert(out.end(), windows.begin(), windows.end());
  }
  return out;
}

std::vector<TrajectorySample> extract_windows(const std::vector<double>& tr, int source_id) {
  std::vector<TrajectorySample> out;
  const int steps = static_cast<int>(tr.size() / 2);
  for (int t0 = 0; t0 + 2 * kSteps <= steps; ++t0) {
    TrajectorySample s;
    s.source_id = source_id;
    s.t0 = t0;
    s.mask.fill(true);
    for (int i = 0; i < kFlat; ++i) {
      s.history[static_cast<std::size_t>(i)] = tr[static_cast<std::size_t>(2 * t0 + i)];
      s.future[static_cast<std::size_t>(i)] = tr[static_cast<std::size_t>(2 * t0 + kFlat + i)];
    }
    const auto anchor = localize(s.history, s.mask);
    for (int t = 0; t < kSteps; ++t) {
      s.future[static_cast<std::size_t>(2 * t)] -= anchor[0];
      s.future[static_cast<std::size_t>(2 * t + 1)] -= anchor[1];
    }
    out.push_back(s);
  }
  return out;
}

std::vector<TrajectorySample> constant_velocity_dataset(int count, Rng& rng, double max_speed) {
  std::vector<TrajectorySample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    const double vx = uniform(rng, 0.0, max_speed);
    const double vy = uniform(rng, -0.1 * max_speed, 0.1 * max_speed);
    TrajectorySample s;
    s.source_id = n;
    s.mask.fill(true);
    for (int t = 0; t < kSteps; ++t) {
      const double back = static_cast<double>(t - (kSteps - 1));
      s.history[static_cast<std::size_t>(2 * t)] = back * vx;
      s.history[static_cast<std::size_t>(2 * t + 1)] = back * vy;
      s.future[static_cast<std::size_t>(2 * t)] = (t + 1) * vx;
      s.future[static_cast<std::size_t>(2 * t + 1)] = (t + 1) * vy;
    }
    out.push_back(s);
  }
  return out;
}

void write_dataset(std::ostream& os, const std::vector<TrajectorySample>& samples) {
  for (const TrajectorySample& s : samples) {
    nlohmann::json h = nlohmann::json::array(), f = nlohmann::json::array();
    for (int t = 0; t < kSteps; ++t) {
      h.push_back({s.history[static_cast<std::size_t>(2 * t)], s.history[static_cast<std::size_t>(2 * t + 1)]});
      f.push_back({s.future[static_cast<std::size_t>(2 * t)], s.future[static_cast<std::size_t>(2 * t + 1)]});
    }
    const nlohmann::json j = {{"history", h}, {"future", f}, {"mask", s.mask}, {"source_id", s.source_id}, {"t0", s.t0}};
    os << j.dump() << '\n';
  }
}

std::vector<TrajectorySample> read_dataset(std::istream& is) {
  std::vector<TrajectorySample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      TrajectorySample s;
      for (int t = 0; t < kSteps; ++t) {
        const auto i = static_cast<std::size_t>(t);
        s.history[2 * i] = j.at("history").at(i).at(0).get<double>();
        s.history[2 * i + 1] = j.at("history").at(i).at(1).get<double>();
        s.future[2 * i] = j.at("future").at(i).at(0).get<double>();
        s.future[2 * i + 1] = j.at("future").at(i).at(1).get<double>();
        s.mask[i] = j.at("mask").at(i).get<bool>();
      }
      s.source_id = j.value("source_id", -1);
      s.t0 = j.value("t0", 0);
      out.push_back(s);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void PredictorHyper::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("predictor epochs and batch_size must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("predictor validation_fraction must lie in (0, 1)");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("predictor learning_rate must be positive");
  if (prefix_mask_prob < 0.0 || prefix_mask_prob > 1.0) throw ConfigError("prefix_mask_prob must lie in [0, 1]");
}

PredictionMetrics evaluate_predictor(Predictor& model, std::span<const TrajectorySample> samples) {
  PredictionMetrics total;
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    std::vector<Track> hist;
    std::vector<StepMask> masks;
    for (std::size_t i = begin; i < end; ++i) {
      hist.push_back(samples[i].history);
      masks.push_back(samples[i].mask);
    }
    Tape tape;
    const Tensor& pred = tape.value(model.forward(tape, hist, masks));
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = pred.values().subspan((i - begin) * kFlat, kFlat);
      const PredictionMetrics m = mad_fad(row, samples[i].future);
      total.mad += m.mad;
      total.fad += m.fad;
      ++total.count;
    }
  }
  if (total.count > 0) {
    total.mad /= static_cast<double>(total.count);
    total.fad /= static_cast<double>(total.count);
  }
  return total;
}

TrainReport train_predictor(Predictor& model, const std::vector<TrajectorySample>& dataset,
                            const PredictorHyper& hyper) {
  hyper.validate();
  if (dataset.empty()) throw ContractError("train_predictor needs a non-empty dataset");
  Rng rng(hyper.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(hyper.validation_fraction * static_cast<double>(dataset.size()))), 1,
      dataset.size() > 1 ? dataset.size() - 1 : 1);
  std::vector<TrajectorySample> val;
  for (std::size_t i = 0; i < n_val; ++i) val.push_back(dataset[order[i]]);
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (train.empty()) train = order;

  const auto params = model.params();
  grad::OptimizerState opt;
  opt.config.learning_rate = hyper.learning_rate;
  std::vector<Tensor> best_values;
  TrainReport report;
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < train.size(); b += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t e = std::min(train.size(), b + static_cast<std::size_t>(hyper.batch_size));
      std::vector<Track> hist;
      std::vector<StepMask> masks;
      Tensor target({static_cast<int>(e - b), kFlat});
      for (std::size_t i = b; i < e; ++i) {
        TrajectorySample s = dataset[train[i]];
        if (hyper.prefix_mask_prob > 0.0 && uniform01(rng) < hyper.prefix_mask_prob) {
          const int hidden = 1 + uniform_index(rng, kSteps - 1);
          for (int t = 0; t < hidden; ++t) {
            s.mask[static_cast<std::size_t>(t)] = false;
            s.history[static_cast<std::size_t>(2 * t)] = s.history[static_cast<std::size_t>(2 * t + 1)] = 0.0;
          }
        }
        hist.push_back(s.history);
        masks.push_back(s.mask);
        for (int k = 0; k < kFlat; ++k) target.at(static_cast<int>(i - b), k) = s.future[static_cast<std::size_t>(k)];
      }
      grad::zero_grads(params);
      Tape tape;
      const double sc = model.config().io_scale;
      const Var diff = tape.scale(tape.sub(model.forward(tape, hist, masks), tape.constant(std::move(target))), sc);
      const Var loss = tape.mean(tape.square(diff));
      tape.backward(loss);
      grad::adam_step(params, opt);
      loss_sum += tape.value(loss).item();
      ++batches;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / std::max(1, batches);
    em.validation = evaluate_predictor(model, val);
    report.epochs.push_back(em);
    if (report.best_epoch < 0 || em.validation.mad < report.best.mad) {
      report.best_epoch = epoch;
      report.best = em.validation;
      best_values.clear();
      for (const auto& p : params) best_values.push_back(*p.tensor);
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (hyper.max_seconds > 0.0 && elapsed > hyper.max_seconds) break;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].tensor->data() = best_values[i].data();
  }
  return report;
}

}  // namespace hppo::forecast
