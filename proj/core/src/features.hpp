#pragma once

#include <span>
#include <vector>

#include "trajclust/autodiff.hpp"
#include "trajclust/dataset.hpp"

namespace trajclust::detail {

/// Per-step network inputs: a sparse 0/1 matrix for plane and symbol
/// observations, a dense matrix for real ones.
struct FeatureBatch {
  bool sparse = true;
  nn::SparseRows rows;
  nn::Tensor dense;
  std::size_t dim = 0;

  std::size_t count() const { return sparse ? rows.rows() : dense.rows(); }
};

/// Input width for the observation (plus one-hot / real action when
/// `with_action`).
std::size_t feature_dim(const ObservationSpace& obs, const ActionSpace& actions, bool with_action);

FeatureBatch make_features(std::span<const Step* const> steps, const ObservationSpace& obs, const ActionSpace& actions,
                           bool with_action);

/// x W for either representation; W is [dim x width].
nn::Var input_layer(nn::Tape& tape, nn::Var weight, const FeatureBatch& features);

/// N(0, scale^2) initialised [rows x cols] tensor.
nn::Tensor random_tensor(std::size_t rows, std::size_t cols, double scale, Rng& rng);

/// Scale for a first layer fed by `features`: sparse inputs sum a handful of
/// table rows, dense ones use 1/sqrt(fan_in).
double input_init_scale(const ObservationSpace& obs, const ActionSpace& actions, bool with_action);

}  // namespace trajclust::detail
