#include "aflow/adam.hpp"

#include <cmath>

#include "aflow/errors.hpp"

namespace aflow {

AdamState AdamState::init(const AdamConfig& config, const NetworkParams& params) {
  AdamState state;
  state.config = config;
  for (const auto& l : params.layers) {
    state.m.emplace_back(l.weight.shape());
    state.m.emplace_back(l.bias.shape());
    state.v.emplace_back(l.weight.shape());
    state.v.emplace_back(l.bias.shape());
  }
  return state;
}

double effective_lr(const AdamConfig& config, std::int64_t t) {
  const std::int64_t decays = config.step_size > 0 ? t / config.step_size : 0;
  return config.lr * std::pow(config.gamma, static_cast<double>(decays));
}

namespace {

void update_tensor(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, const AdamConfig& cfg, double lr, double bc1, double bc2) {
  const std::int64_t n = p.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double gi = g[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace

void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state) {
  if (grads.layers.size() != params.layers.size() || state.m.size() != 2 * params.layers.size()) {
    throw ConfigError("adam_step: gradient/state structure does not mirror parameters");
  }
  state.t += 1;
  const double lr = effective_lr(state.config, state.t);
  const double bc1 = 1.0 - std::pow(state.config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(state.t));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    LayerParams& p = params.layers[l];
    const LayerParams& g = grads.layers[l];
    require_same_shape(p.weight, g.weight, "adam_step weight");
    require_same_shape(p.bias, g.bias, "adam_step bias");
    update_tensor(p.weight, g.weight, state.m[2 * l], state.v[2 * l], state.config, lr, bc1, bc2);
    update_tensor(p.bias, g.bias, state.m[2 * l + 1], state.v[2 * l + 1], state.config, lr, bc1, bc2);
    require_finite(p.weight, "adam_step updated weight");
    require_finite(p.bias, "adam_step updated bias");
  }
}

}  // namespace aflow
