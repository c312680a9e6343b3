#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "trajclust/checkpoint.hpp"
#include "trajclust/dataset.hpp"
#include "trajclust/tensor.hpp"

/// Conditional action distributions P(a | s) and their behaviour-cloning fit.
namespace trajclust::policy {

enum class Family : std::uint8_t { tabular, linear_softmax, mlp_categorical, linear_gaussian };

std::string_view family_name(Family family);
Family parse_family(std::string_view name);
bool is_categorical(Family family);

struct FitConfig {
  /// Laplace pseudo-count for tabular policies; must be > 0.
  double smoothing = 1.0;
  /// Tabular only: key the table by (state, timestep).
  bool timestep_indexed = false;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::vector<std::size_t> hidden{128, 128};
  std::uint64_t seed = 0;
};

struct Action {
  int index = 0;
  std::vector<double> real;
};

/// Immutable, thread-safe once built.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual Family family() const = 0;
  virtual const ActionSpace& actions() const = 0;
  /// True for the placeholder fitted to an empty cluster.
  virtual bool is_uniform() const { return false; }

  /// log P(a_h | s_h) per step.
  virtual std::vector<double> step_log_probs(const Trajectory& traj) const = 0;
  /// Sum of step_log_probs.
  virtual double log_likelihood(const Trajectory& traj) const;
  /// Maximum-a-posteriori penalty the fit maximises jointly with the
  /// likelihood (Laplace prior for tabular policies); 0 for other families.
  virtual double log_prior() const { return 0.0; }

  /// Draws an action for the observation at timestep t.
  virtual Action sample(const Step& context, std::size_t t, Rng& rng) const = 0;

  virtual std::vector<nn::NamedTensor> to_tensors() const = 0;
};

using PolicyPtr = std::shared_ptr<const Policy>;

/// Per-state action counts with Laplace smoothing:
/// P(a | s) = (n_{s,a} + eps) / (n_s + |A| eps); unseen states are uniform.
class TabularPolicy final : public Policy {
 public:
  TabularPolicy(std::size_t n_actions, double smoothing, bool timestep_indexed = false);

  void add(StateKey key, std::size_t t, int action, double weight = 1.0);
  double log_prob(StateKey key, std::size_t t, int action) const;
  /// Smoothed distribution at a state.
  std::vector<double> probabilities(StateKey key, std::size_t t) const;
  /// Replace one state's distribution (tests perturb fitted tables this way).
  void set_probabilities(StateKey key, std::size_t t, std::span<const double> probs);
  std::size_t state_count() const { return table_.size(); }
  double smoothing() const { return smoothing_; }

  Family family() const override { return Family::tabular; }
  const ActionSpace& actions() const override { return actions_; }
  std::vector<double> step_log_probs(const Trajectory& traj) const override;
  double log_likelihood(const Trajectory& traj) const override;
  double log_prior() const override;
  Action sample(const Step& context, std::size_t t, Rng& rng) const override;
  std::vector<nn::NamedTensor> to_tensors() const override;

 private:
  StateKey slot_key(StateKey key, std::size_t t) const;

  ActionSpace actions_;
  double smoothing_;
  bool timestep_indexed_;
  /// Per state: log-probabilities of each action, cached at insertion time.
  struct Row {
    std::vector<double> counts;
    double total = 0.0;
    std::vector<double> log_probs;  // overrides counts when non-empty
  };
  std::unordered_map<StateKey, Row> table_;
};

/// Uniform categorical (discrete) or standard normal (continuous).
class UniformPolicy final : public Policy {
 public:
  UniformPolicy(Family family, ActionSpace actions) : family_(family), actions_(actions) {}
  Family family() const override { return family_; }
  const ActionSpace& actions() const override { return actions_; }
  bool is_uniform() const override { return true; }
  std::vector<double> step_log_probs(const Trajectory& traj) const override;
  Action sample(const Step& context, std::size_t t, Rng& rng) const override;
  std::vector<nn::NamedTensor> to_tensors() const override;

 private:
  Family family_;
  ActionSpace actions_;
};

/// Linear-softmax, feed-forward categorical or linear-Gaussian network.
class NeuralPolicy final : public Policy {
 public:
  NeuralPolicy(Family family, ObservationSpace obs, ActionSpace actions, std::vector<nn::Tensor> params);

  Family family() const override { return family_; }
  const ActionSpace& actions() const override { return actions_; }
  std::vector<double> step_log_probs(const Trajectory& traj) const override;
  Action sample(const Step& context, std::size_t t, Rng& rng) const override;
  std::vector<nn::NamedTensor> to_tensors() const override;

  const std::vector<nn::Tensor>& parameters() const { return params_; }
  /// Categorical head: per-step action distribution; Gaussian: means.
  nn::Tensor forward(std::span<const Step* const> steps) const;

 private:
  Family family_;
  ObservationSpace obs_;
  ActionSpace actions_;
  std::vector<nn::Tensor> params_;
};

PolicyPtr make_uniform(Family family, const ActionSpace& actions);

/// Behaviour cloning on the given trajectories. An empty list yields the
/// uniform placeholder. Gradient families run `epochs` passes of Adam over
/// shuffled step minibatches, deterministic given config.seed.
PolicyPtr fit(Family family, std::span<const Trajectory* const> trajectories, const ObservationSpace& obs,
              const ActionSpace& actions, const FitConfig& config = {});
/// Convenience: fit on all trajectories of a dataset.
PolicyPtr fit(Family family, const Dataset& data, const FitConfig& config = {});

/// Mean per-step negative log-likelihood.
double mean_nll(const Policy& policy, std::span<const Trajectory* const> trajectories);

Action sample_action(const Policy& policy, const Step& context, std::size_t t, Rng& rng);

/// Checkpoint round trip (numerics checkpoint format).
void save_policy(const Policy& policy, const std::filesystem::path& path);
PolicyPtr load_policy(const std::filesystem::path& path, const ObservationSpace& obs);

}  // namespace trajclust::policy
