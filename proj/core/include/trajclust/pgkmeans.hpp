#pragma once

#include <optional>
#include <span>
#include <vector>

#include "trajclust/dataset.hpp"
#include "trajclust/policy.hpp"

/// Policy-guided k-means: hard EM over behaviour-cloned cluster policies.
namespace trajclust::pgk {

/// Hard assignment of N trajectories to K clusters (each row of the implied
/// one-hot matrix has exactly one 1).
class ClusterAssignment {
 public:
  ClusterAssignment() = default;
  /// Throws DataError if a label is >= k.
  ClusterAssignment(std::vector<std::size_t> labels, std::size_t k);

  std::size_t k() const { return k_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t operator[](std::size_t i) const { return labels_[i]; }
  const std::vector<std::size_t>& labels() const { return labels_; }

  std::vector<std::size_t> sizes() const;
  /// Trajectory indices of each cluster, ascending.
  std::vector<std::vector<std::size_t>> members() const;

  friend bool operator==(const ClusterAssignment&, const ClusterAssignment&) = default;

 private:
  std::vector<std::size_t> labels_;
  std::size_t k_ = 0;
};

enum class MergeCriterion : std::uint8_t {
  /// Merge the pair (i, j) maximising sum_{tau in D_j} log P(tau | theta_i).
  most_compatible,
  /// Literal reading: the pair minimising the same quantity.
  literal_argmin,
};

enum class InitMode : std::uint8_t {
  uniform_random,
  /// Seeds cluster policies from trajectories spread apart in likelihood
  /// (k-means++ analogue), then assigns by an E-step.
  likelihood_spread,
};

struct PgkConfig {
  std::size_t k = 4;
  std::optional<std::size_t> k_star;
  std::size_t max_iters = 50;
  policy::Family family = policy::Family::tabular;
  policy::FitConfig fit;
  MergeCriterion merge = MergeCriterion::most_compatible;
  InitMode init = InitMode::uniform_random;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

struct PgkRun {
  /// W^0 (initial) through the last E-step result.
  std::vector<ClusterAssignment> history;
  /// J(W^{t-1}, theta^t) after each M-step.
  std::vector<double> objective;
  /// Same, plus the policies' log_prior: the quantity both steps ascend
  /// exactly for tabular policies.
  std::vector<double> penalized_objective;
  std::size_t iterations = 0;
  bool converged = false;
  /// Final assignment and policies (after merging when k_star was given).
  ClusterAssignment assignment;
  std::vector<policy::PolicyPtr> policies;
  double final_objective = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  /// Best-of-N only: final J of every candidate run, and the winner's index.
  std::vector<double> candidate_objectives;
  std::size_t chosen_run = 0;
};

/// J = sum_i log P(tau_i | theta_{c(i)}).
double objective(const Dataset& data, const ClusterAssignment& assignment, std::span<const policy::PolicyPtr> policies);
/// J plus sum_j log_prior(theta_j).
double penalized_objective(const Dataset& data, const ClusterAssignment& assignment,
                           std::span<const policy::PolicyPtr> policies);

/// Log-likelihood of every trajectory under every policy, [N][K].
std::vector<std::vector<double>> score_matrix(const Dataset& data, std::span<const policy::PolicyPtr> policies,
                                              unsigned jobs = 1);

/// c(i) = argmax_j log P(tau_i | theta_j), lowest index on ties. When
/// `current` is given, a trajectory keeps its cluster if that cluster ties
/// for the maximum, so an assignment only changes on strict improvement.
ClusterAssignment e_step(const Dataset& data, std::span<const policy::PolicyPtr> policies,
                         const ClusterAssignment* current = nullptr, unsigned jobs = 1);

/// Behaviour cloning per cluster; empty clusters get the uniform placeholder.
std::vector<policy::PolicyPtr> m_step(const Dataset& data, const ClusterAssignment& assignment,
                                      policy::Family family, const policy::FitConfig& fit = {}, unsigned jobs = 1);

struct MergeResult {
  ClusterAssignment assignment;
  std::vector<policy::PolicyPtr> policies;
  /// (surviving, absorbed) indices at the time of each merge.
  std::vector<std::pair<std::size_t, std::size_t>> merges;
};

/// Greedily merges clusters until k_star remain. After each merge the
/// surviving policy is refit on the merged data. Throws DataError when
/// k_star is 0 or exceeds the current cluster count.
MergeResult merge(const Dataset& data, const ClusterAssignment& assignment, std::vector<policy::PolicyPtr> policies,
                  std::size_t k_star, policy::Family family, const policy::FitConfig& fit = {},
                  MergeCriterion criterion = MergeCriterion::most_compatible);

/// Random initial assignment, then alternating M/E steps until the
/// assignment repeats or max_iters is reached; merges to k_star if given.
PgkRun run(const Dataset& data, const PgkConfig& config);

/// n independent runs; returns the one with the highest final J (earliest
/// run on ties). Run 0 uses config.seed itself, so n = 1 equals run().
PgkRun best_of_n(const Dataset& data, std::size_t n, const PgkConfig& config);

}  // namespace trajclust::pgk
