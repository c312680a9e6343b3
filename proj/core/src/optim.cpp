#include "trajclust/optim.hpp"

#include <cmath>

#include "trajclust/common.hpp"

namespace trajclust::nn {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config) {
  if (param.shape() != grad.shape())
    throw ShapeError("adam_step: parameter " + shape_string(param.shape()) + " vs gradient " +
                     shape_string(grad.shape()));
  if (state.m.shape() != param.shape()) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
    state.step = 0;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size())
    throw ShapeError("Adam::step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients");
  if (states_.size() != params.size()) states_.assign(params.size(), AdamState{});
  for (std::size_t i = 0; i < params.size(); ++i) adam_step(*params[i], grads[i], states_[i], config_);
}

}  // namespace trajclust::nn
