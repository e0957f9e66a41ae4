#include "hppo/gridenc/gridenc.hpp"

#include <sstream>

#include "hppo/errors.hpp"

namespace hppo::gridenc {

using grad::Shape;
using grad::Tape;
using grad::Var;

void EncoderConfig::validate() const {
  if (in_channels < 1 || rows < 1 || cols < 1) throw ConfigError("encoder input shape must be positive");
  if (channels.empty()) throw ConfigError("encoder needs at least one conv layer");
  for (int c : channels) {
    if (c < 1) throw ConfigError("encoder channel counts must be >= 1");
  }
  if (kernel < 1 || stride < 1) throw ConfigError("encoder kernel and stride must be >= 1");
}

namespace {

int conv_out(int n, int kernel, int stride, int padding) { return (n + 2 * padding - kernel) / stride + 1; }

}  // namespace

GridEncoder::GridEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int pad = cfg.kernel / 2;
  int c = cfg.in_channels, h = cfg.rows, w = cfg.cols;
  for (int out : cfg.channels) {
    convs_.emplace_back(c, out, cfg.kernel, cfg.stride, pad, rng);
    h = conv_out(h, cfg.kernel, cfg.stride, pad);
    w = conv_out(w, cfg.kernel, cfg.stride, pad);
    if (h < 1 || w < 1) throw ConfigError("encoder input too small for its conv stack");
    c = out;
  }
  head_ = grad::Dense(c * h * w, kFeatureWidth, rng);
}

Var GridEncoder::forward(Tape& tape, Var grid) {
  const Shape expected{cfg_.in_channels, cfg_.rows, cfg_.cols};
  if (tape.value(grid).shape() != expected) {
    throw ShapeError("grid encoder expects " + grad::shape_str(expected) + ", got " +
                     grad::shape_str(tape.value(grid).shape()));
  }
  Var x = grid;
  for (grad::Conv2d& conv : convs_) x = tape.relu(conv.forward(tape, x));
  x = tape.reshape(x, {1, static_cast<int>(tape.value(x).size())});
  return tape.tanh(head_.forward(tape, x));
}

std::array<double, kFeatureWidth> GridEncoder::encode(const percept::SemanticGrid& grid) const {
  Tape tape;
  // Forward only: parameters are read, never written.
  const Var y = const_cast<GridEncoder*>(this)->forward(tape, tape.constant(grid.one_hot()));
  std::array<double, kFeatureWidth> out{};
  for (int i = 0; i < kFeatureWidth; ++i) out[static_cast<std::size_t>(i)] = tape.value(y)[static_cast<std::size_t>(i)];
  return out;
}

std::vector<grad::ParamRef> GridEncoder::params() {
  std::vector<grad::ParamRef> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("encoder.conv" + std::to_string(i), out);
  head_.collect("encoder.head", out);
  return out;
}

std::map<std::string, std::string> GridEncoder::meta() const {
  std::ostringstream ch;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) ch << (i ? "," : "") << cfg_.channels[i];
  return {{"encoder_in_channels", std::to_string(cfg_.in_channels)},
          {"encoder_rows", std::to_string(cfg_.rows)},
          {"encoder_cols", std::to_string(cfg_.cols)},
          {"encoder_channels", ch.str()},
          {"encoder_kernel", std::to_string(cfg_.kernel)},
          {"encoder_stride", std::to_string(cfg_.stride)}};
}

EncoderConfig GridEncoder::config_from_meta(const std::map<std::string, std::string>& meta) {
  auto get = [&](const char* key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw IoError(std::string("checkpoint lacks meta '") + key + "'");
    return it->second;
  };
  EncoderConfig c;
  c.in_channels = std::stoi(get("encoder_in_channels"));
  c.rows = std::stoi(get("encoder_rows"));
  c.cols = std::stoi(get("encoder_cols"));
  c.kernel = std::stoi(get("encoder_kernel"));
  c.stride = std::stoi(get("encoder_stride"));
  c.channels.clear();
  std::istringstream ss(get("encoder_channels"));
  for (std::string tok; std::getline(ss, tok, ',');) c.channels.push_back(std::stoi(tok));
  return c;
}

}  // namespace hppo::gridenc
