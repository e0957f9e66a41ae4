#include "hppo/grad/adam.hpp"

#include <cmath>

#include "hppo/errors.hpp"

namespace hppo::grad {

void adam_step(const std::vector<ParamRef>& params, OptimizerState& state) {
  for (const ParamRef& p : params) {
    if (p.tensor->grad().size() != p.tensor->size()) {
      throw ContractError("adam_step: missing gradient for parameter '" + p.name + "'");
    }
  }
  if (state.first_moment.empty()) {
    for (const ParamRef& p : params) {
      state.first_moment.emplace_back(p.tensor->size(), 0.0);
      state.second_moment.emplace_back(p.tensor->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter set does not match optimizer state");
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = *params[k].tensor;
    std::vector<double>& m = state.first_moment[k];
    std::vector<double>& v = state.second_moment[k];
    if (m.size() != t.size()) {
      throw ContractError("adam_step: accumulator shape differs for '" + params[k].name + "'");
    }
    const std::vector<double>& g = t.grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      t[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace hppo::grad
