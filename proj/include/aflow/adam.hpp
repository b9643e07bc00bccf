#ifndef AFLOW_ADAM_HPP_
#define AFLOW_ADAM_HPP_

#include <cstdint>
#include <vector>

#include "aflow/network.hpp"
#include "aflow/tensor.hpp"

namespace aflow {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-4;
  std::int64_t step_size = 50000;  // iterations between learning-rate decays
  double gamma = 0.5;              // decay multiplier
};

// First/second moments mirror the parameter list: entries 2l and 2l+1 hold
// the moments for layer l's weight and bias.
struct AdamState {
  AdamConfig config;
  std::int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(const AdamConfig& config, const NetworkParams& params);
};

// base_lr * gamma^floor(t / step_size)
double effective_lr(const AdamConfig& config, std::int64_t t);

// One bias-corrected ADAM update; increments state.t.
void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state);

}  // namespace aflow

#endif  // AFLOW_ADAM_HPP_
