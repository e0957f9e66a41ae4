#pragma once

#include <cstdint>
#include <vector>

#include "hppo/grad/nn.hpp"

namespace hppo::grad {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter moment accumulators plus the shared step counter.
struct OptimizerState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected adaptive-moment update using each parameter's grad().
/// Throws ContractError if a parameter has no gradient or the parameter set
/// changed shape since the state was created.
void adam_step(const std::vector<ParamRef>& params, OptimizerState& state);

}  // namespace hppo::grad
