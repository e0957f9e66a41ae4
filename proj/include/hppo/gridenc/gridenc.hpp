#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "hppo/grad/nn.hpp"
#include "hppo/grad/tape.hpp"
#include "hppo/percept/percept.hpp"
#include "hppo/rng.hpp"

namespace hppo::gridenc {

inline constexpr int kFeatureWidth = 10;

struct EncoderConfig {
  int in_channels = percept::kGridClasses;
  int rows = 64;
  int cols = 64;
  std::vector<int> channels{8, 16, 16};
  int kernel = 3;
  int stride = 2;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Conv blocks with ReLU, flatten, dense to ten, tanh.
class GridEncoder {
 public:
  GridEncoder() = default;
  GridEncoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  /// [channels x rows x cols] -> [1 x 10].
  grad::Var forward(grad::Tape& tape, grad::Var grid);
  std::array<double, kFeatureWidth> encode(const percept::SemanticGrid& grid) const;

  std::vector<grad::ParamRef> params();
  std::map<std::string, std::string> meta() const;
  static EncoderConfig config_from_meta(const std::map<std::string, std::string>& meta);

 private:
  EncoderConfig cfg_;
  std::vector<grad::Conv2d> convs_;
  grad::Dense head_;
};

}  // namespace hppo::gridenc
