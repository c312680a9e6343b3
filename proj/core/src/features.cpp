#include "features.hpp"

#include <cmath>
#include <random>

namespace trajclust::detail {

std::size_t feature_dim(const ObservationSpace& obs, const ActionSpace& actions, bool with_action) {
  return obs.dim + (with_action ? actions.size : 0);
}

FeatureBatch make_features(std::span<const Step* const> steps, const ObservationSpace& obs, const ActionSpace& actions,
                           bool with_action) {
  FeatureBatch batch;
  batch.dim = feature_dim(obs, actions, with_action);
  batch.sparse = obs.kind != Observation::Kind::real;
  if (batch.sparse) {
    batch.rows.cols = batch.dim;
    batch.rows.offsets.reserve(steps.size() + 1);
    std::vector<std::uint32_t> active;
    for (const Step* s : steps) {
      active.clear();
      for (auto idx : s->obs.active())
        if (idx < obs.dim) active.push_back(idx);
      if (with_action) {
        if (actions.continuous) throw DataError("sparse observations with continuous actions are not supported");
        active.push_back(static_cast<std::uint32_t>(obs.dim + static_cast<std::size_t>(s->action)));
      }
      batch.rows.add_row(active);
    }
  } else {
    batch.dense = nn::Tensor(nn::Shape{steps.size(), batch.dim});
    for (std::size_t r = 0; r < steps.size(); ++r) {
      const auto values = steps[r]->obs.values();
      if (values.size() != obs.dim)
        throw DataError("observation of size " + std::to_string(values.size()) + ", expected " + std::to_string(obs.dim));
      for (std::size_t c = 0; c < obs.dim; ++c) batch.dense.at(r, c) = values[c];
      if (with_action) {
        if (actions.continuous) {
          if (steps[r]->real_action.size() != actions.size) throw DataError("continuous action has the wrong dimension");
          for (std::size_t c = 0; c < actions.size; ++c) batch.dense.at(r, obs.dim + c) = steps[r]->real_action[c];
        } else {
          batch.dense.at(r, obs.dim + static_cast<std::size_t>(steps[r]->action)) = 1.0;
        }
      }
    }
  }
  return batch;
}

nn::Var input_layer(nn::Tape& tape, nn::Var weight, const FeatureBatch& features) {
  if (features.sparse) return tape.embedding_bag(weight, features.rows);
  return tape.matmul(tape.constant(features.dense), weight);
}

nn::Tensor random_tensor(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::Tensor t(nn::Shape{rows, cols});
  for (auto& x : t.data()) x = scale * normal(rng);
  return t;
}

double input_init_scale(const ObservationSpace& obs, const ActionSpace& actions, bool with_action) {
  if (obs.kind != Observation::Kind::real) return 0.1;
  return 1.0 / std::sqrt(static_cast<double>(feature_dim(obs, actions, with_action)));
}

}  // namespace trajclust::detail
