#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "trajclust/tensor.hpp"

namespace trajclust::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one parameter tensor.
struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of `param` in place.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config = {});

/// Adam over a fixed, ordered list of parameters.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

 private:
  AdamConfig config_;
  std::vector<AdamState> states_;
};

}  // namespace trajclust::nn
