#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hppo/grad/tape.hpp"
#include "hppo/grad/tensor.hpp"
#include "hppo/rng.hpp"

namespace hppo::grad {

/// Named, non-owning reference to a trainable tensor.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng);

/// Fully connected layer, x [m x in] -> [m x out].
struct Dense {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Dense() = default;
  Dense(int in, int out, Rng& rng);

  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
  Var forward(Tape& tape, Var x);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

/// 2-D convolution with per-channel bias, [c x h x w] -> [o x h' x w'].
struct Conv2d {
  Tensor kernels;  // [o x c x k x k]
  Tensor bias;     // [o]
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng);

  Var forward(Tape& tape, Var x);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

void zero_grads(const std::vector<ParamRef>& params);
std::size_t count_values(const std::vector<ParamRef>& params);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<ParamRef>& params, double max_norm);

}  // namespace hppo::grad
