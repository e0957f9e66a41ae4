#include "hppo/grad/nn.hpp"

#include <cmath>

#include "hppo/errors.hpp"

namespace hppo {

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace hppo

namespace hppo::grad {

void glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data()) v = uniform(rng, -limit, limit);
}

Dense::Dense(int in, int out, Rng& rng) : weight({in, out}), bias({out}) {
  glorot_uniform(weight, in, out, rng);
}

Var Dense::forward(Tape& tape, Var x) {
  const Tensor& X = tape.value(x);
  if (X.rank() != 2 || X.dim(1) != in_features()) {
    throw ShapeError("dense layer expects [m x " + std::to_string(in_features()) + "], got " +
                     shape_str(X.shape()));
  }
  return tape.add_row(tape.matmul(x, tape.param(weight)), tape.param(bias));
}

void Dense::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int padding_, Rng& rng)
    : kernels({out_channels, in_channels, kernel, kernel}), bias({out_channels}), stride(stride_),
      padding(padding_) {
  glorot_uniform(kernels, in_channels * kernel * kernel, out_channels * kernel * kernel, rng);
}

Var Conv2d::forward(Tape& tape, Var x) {
  return tape.add_channel_bias(tape.conv2d(x, tape.param(kernels), stride, padding), tape.param(bias));
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".kernels", &kernels});
  out.push_back({prefix + ".bias", &bias});
}

void zero_grads(const std::vector<ParamRef>& params) {
  for (const ParamRef& p : params) p.tensor->zero_grad();
}

std::size_t count_values(const std::vector<ParamRef>& params) {
  std::size_t n = 0;
  for (const ParamRef& p : params) n += p.tensor->size();
  return n;
}

double clip_grad_norm(const std::vector<ParamRef>& params, double max_norm) {
  double sq = 0.0;
  for (const ParamRef& p : params) {
    for (double g : p.tensor->grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (const ParamRef& p : params) {
      for (double& g : p.tensor->grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace hppo::grad
