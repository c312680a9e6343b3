#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "trajclust/autodiff.hpp"
#include "trajclust/checkpoint.hpp"
#include "trajclust/dataset.hpp"
#include "trajclust/pgkmeans.hpp"

/// Centroid-attracted autoencoder: a trajectory encoder whose latent codes
/// are pulled toward a learnable codebook, and an action decoder conditioned
/// on (z, observation). Clusters are nearest centroids.
namespace trajclust::caae {

struct CaaeConfig {
  std::size_t latent_dim = 16;
  std::vector<std::size_t> encoder_hidden{128, 128};
  std::size_t attention_dim = 32;
  std::vector<std::size_t> decoder_hidden{128, 32, 32};
  /// Attraction weight.
  double alpha = 1.0;
  /// Multiplies the -(1/m^2) sum min{1, |mu_i - mu_j|^2} term; 0 disables it.
  double separation_weight = 1.0;
  std::size_t epochs = 50;
  /// Trajectories per minibatch.
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  /// Codebook entries start as codebook_scale * N(0, I).
  double codebook_scale = 1.0;
  /// Initial spread of the encoder's output map, relative to 1/sqrt(fan_in).
  double latent_init_gain = 1.0;
  /// After each epoch (except the last), move every starved centroid onto
  /// the latent code that most lowers the total attraction. A centroid is
  /// starved when fewer than dead_centroid_fraction * N / m trajectories are
  /// nearest to it; unused centroids always count.
  bool reset_dead_centroids = true;
  double dead_centroid_fraction = 0.5;
};

struct LossComponents {
  double reconstruction = 0.0;  ///< -sum log P(a | z, s)
  double attraction = 0.0;      ///< alpha * sum_i min_j |mu_j - z_i|^2
  double separation = 0.0;      ///< <= 0
  double total = 0.0;
};

struct EpochLog {
  /// 0 is the untrained model on the full dataset; later entries sum the
  /// minibatch losses seen during that epoch.
  std::size_t epoch = 0;
  LossComponents loss;
  std::size_t centroids_reset = 0;
};

struct LatentEmbedding {
  std::vector<double> z;
  std::size_t index = 0;
};

class CaaeModel {
 public:
  /// Random initialisation with m = k codebook entries.
  CaaeModel(const ObservationSpace& obs, const ActionSpace& actions, std::size_t k, const CaaeConfig& config,
            std::uint64_t seed);

  std::size_t k() const { return k_; }
  const CaaeConfig& config() const { return config_; }
  const ObservationSpace& observations() const { return obs_; }
  const ActionSpace& actions() const { return actions_; }

  std::vector<nn::Tensor>& parameters() { return params_; }
  const std::vector<nn::Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  nn::Tensor& parameter(const std::string& name);
  const nn::Tensor& parameter(const std::string& name) const;
  nn::Tensor& codebook() { return params_.back(); }
  const nn::Tensor& codebook() const { return params_.back(); }

  std::vector<nn::NamedTensor> to_tensors() const;
  static CaaeModel from_tensors(const std::vector<nn::NamedTensor>& records);

 private:
  CaaeModel() = default;
  void add(std::string name, nn::Tensor value);

  ObservationSpace obs_;
  ActionSpace actions_;
  std::size_t k_ = 0;
  CaaeConfig config_;
  std::vector<std::string> names_;
  std::vector<nn::Tensor> params_;
};

/// Symbolic loss on a tape whose leaves (or constants) are the model
/// parameters in model order. separation_scale multiplies the separation
/// term on top of config.separation_weight (training uses B/N per batch so
/// an epoch adds up to the full-data loss).
struct LossGraph {
  nn::Var total, reconstruction, attraction, separation;
  nn::Var z;  ///< [B x d_z]
};
LossGraph build_loss(nn::Tape& tape, const CaaeModel& model, std::span<const nn::Var> params,
                     std::span<const Trajectory* const> batch, double separation_scale = 1.0);

LossComponents loss(const CaaeModel& model, std::span<const Trajectory* const> batch, double separation_scale = 1.0);
/// d total / d parameter, in model order.
std::vector<nn::Tensor> loss_gradients(const CaaeModel& model, std::span<const Trajectory* const> batch,
                                       double separation_scale = 1.0);

/// Attention-pooled latent code. Throws DataError for an empty trajectory.
LatentEmbedding encode(const CaaeModel& model, const Trajectory& traj, std::size_t index = 0);
std::vector<LatentEmbedding> encode_all(const CaaeModel& model, const Dataset& data);
/// Per-step embedding y_h before pooling, [steps x d_z].
nn::Tensor step_embeddings(const CaaeModel& model, const Trajectory& traj);

/// log P(action | z, observation). Throws DataError on an invalid action.
double decode_logprob(const CaaeModel& model, std::span<const double> z, const Step& step);

struct TrainResult {
  CaaeModel model;
  std::vector<EpochLog> log;
  double wall_seconds = 0.0;
};
/// Minibatch Adam on the full loss; deterministic given seed.
TrainResult train(const Dataset& data, std::size_t k, const CaaeConfig& config, std::uint64_t seed);

/// argmin_j |mu_j - z|^2, lowest index on ties.
std::size_t nearest_centroid(const nn::Tensor& codebook, std::span<const double> z);
pgk::ClusterAssignment assign(const CaaeModel& model, const Dataset& data);

/// Moves unused centroids onto latent codes, one at a time, each time
/// choosing the code that most reduces sum_i min_j |mu_j - z_i|^2; returns
/// how many moved.
std::size_t reset_dead_centroids(CaaeModel& model, std::span<const LatentEmbedding> latents,
                                 double dead_fraction = 0.0);

/// Scales the encoder output map and the codebook by lambda and the
/// decoder's latent input map by 1 / lambda: z and mu shrink together while
/// the decoder sees the same pre-activations.
void rescale_latent(CaaeModel& model, double lambda);

void save_model(const CaaeModel& model, const std::filesystem::path& path);
CaaeModel load_model(const std::filesystem::path& path);

}  // namespace trajclust::caae
