#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "psmlc/error.hpp"
#include "psmlc/network.hpp"
#include "psmlc/tensor.hpp"

namespace psmlc {

/// Adam moment accumulators, one pair per parameter tensor in the order
/// layer0.weight, layer0.bias, layer1.weight, ...
struct OptimizerState {
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static OptimizerState adam(const Network& net, double learning_rate = 1e-3) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    OptimizerState s;
    s.learning_rate = learning_rate;
    for (const auto& layer : net.layers()) {
      s.first_moment.emplace_back(layer.weight.shape());
      s.first_moment.emplace_back(layer.bias.shape());
    }
    s.second_moment = s.first_moment;
    return s;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

namespace detail {

inline void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                        const OptimizerState& s, double correction1, double correction2) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    param[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

}  // namespace detail

/// One bias-corrected Adam update of every parameter.
inline void adam_step(Network& net, OptimizerState& state, const Gradients& grads) {
  auto& layers = net.layers();
  if (grads.size() != layers.size() || state.first_moment.size() != 2 * layers.size() ||
      state.second_moment.size() != 2 * layers.size()) {
    throw ConfigError("optimizer state does not match the network");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require_same_shape(layers[l].weight, grads[l].weight, "adam weight gradient");
    require_same_shape(layers[l].bias, grads[l].bias, "adam bias gradient");
    require_same_shape(layers[l].weight, state.first_moment[2 * l], "adam accumulator");
    require_same_shape(layers[l].bias, state.first_moment[2 * l + 1], "adam accumulator");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    detail::adam_update(layers[l].weight, grads[l].weight, state.first_moment[2 * l],
                        state.second_moment[2 * l], state, correction1, correction2);
    detail::adam_update(layers[l].bias, grads[l].bias, state.first_moment[2 * l + 1],
                        state.second_moment[2 * l + 1], state, correction1, correction2);
  }
}

/// Backpropagates dLoss/dLogits through the cached forward pass, applies
/// Adam, and consumes the cache so a second call without forward() fails.
inline void backward_and_step(Network& net, OptimizerState& state, const Tensor& grad_logits) {
  const Gradients grads = net.backward(grad_logits);
  adam_step(net, state, grads);
  net.clear_cache();
}

}  // namespace psmlc
