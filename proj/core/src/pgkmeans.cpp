#include "trajclust/pgkmeans.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <numeric>
#include <random>

namespace trajclust::pgk {

using policy::PolicyPtr;

namespace {

std::vector<const Trajectory*> gather(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<const Trajectory*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&data.trajectories[i]);
  return out;
}

policy::FitConfig cluster_fit(const policy::FitConfig& base, std::size_t cluster) {
  policy::FitConfig fit = base;
  fit.seed = derive_seed({base.seed, cluster});
  return fit;
}

PolicyPtr fit_cluster(const Dataset& data, const std::vector<std::size_t>& members, policy::Family family,
                      const policy::FitConfig& fit) {
  return policy::fit(family, gather(data, members), observation_space(data), action_space(data.meta.env), fit);
}

void check_policies(std::size_t k, std::span<const PolicyPtr> policies) {
  if (policies.size() != k)
    throw DataError("assignment has " + std::to_string(k) + " clusters but " + std::to_string(policies.size()) +
                    " policies were given");
}

ClusterAssignment random_assignment(std::size_t n, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> cluster(0, k - 1);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = cluster(rng);
  return {std::move(labels), k};
}

/// k-means++ analogue: each new seed trajectory is drawn with probability
/// proportional to how badly the existing seed policies explain it.
ClusterAssignment spread_assignment(const Dataset& data, const PgkConfig& config, Rng& rng) {
  const std::size_t n = data.size();
  std::vector<PolicyPtr> seeds;
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  for (std::size_t j = 0; j < config.k; ++j) {
    seeds.push_back(fit_cluster(data, {pick}, config.family, cluster_fit(config.fit, j)));
    std::vector<double> weight(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& t = data.trajectories[i];
      const double per_step = t.size() ? -seeds.back()->log_likelihood(t) / static_cast<double>(t.size()) : 0.0;
      best[i] = std::min(best[i], per_step);
      weight[i] = std::max(0.0, best[i]);
    }
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    if (total <= 0.0) {
      pick = first(rng);
    } else {
      std::discrete_distribution<std::size_t> d(weight.begin(), weight.end());
      pick = d(rng);
    }
  }
  return e_step(data, seeds, nullptr, config.jobs);
}

}  // namespace

ClusterAssignment::ClusterAssignment(std::vector<std::size_t> labels, std::size_t k) : labels_(std::move(labels)), k_(k) {
  for (auto l : labels_)
    if (l >= k_) throw DataError("cluster label " + std::to_string(l) + " out of range for k = " + std::to_string(k_));
}

std::vector<std::size_t> ClusterAssignment::sizes() const {
  std::vector<std::size_t> out(k_, 0);
  for (auto l : labels_) ++out[l];
  return out;
}

std::vector<std::vector<std::size_t>> ClusterAssignment::members() const {
  std::vector<std::vector<std::size_t>> out(k_);
  for (std::size_t i = 0; i < labels_.size(); ++i) out[labels_[i]].push_back(i);
  return out;
}

double objective(const Dataset& data, const ClusterAssignment& assignment, std::span<const PolicyPtr> policies) {
  if (assignment.size() != data.size())
    throw DataError("assignment covers " + std::to_string(assignment.size()) + " of " + std::to_string(data.size()) +
                    " trajectories");
  check_policies(assignment.k(), policies);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) total += policies[assignment[i]]->log_likelihood(data.trajectories[i]);
  return total;
}

double penalized_objective(const Dataset& data, const ClusterAssignment& assignment,
                           std::span<const PolicyPtr> policies) {
  double total = objective(data, assignment, policies);
  for (const auto& p : policies) total += p->log_prior();
  return total;
}

std::vector<std::vector<double>> score_matrix(const Dataset& data, std::span<const PolicyPtr> policies, unsigned jobs) {
  std::vector<std::vector<double>> scores(data.size(), std::vector<double>(policies.size()));
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    for (std::size_t j = 0; j < policies.size(); ++j) scores[i][j] = policies[j]->log_likelihood(data.trajectories[i]);
  });
  return scores;
}

ClusterAssignment e_step(const Dataset& data, std::span<const PolicyPtr> policies, const ClusterAssignment* current,
                         unsigned jobs) {
  if (policies.empty()) throw DataError("e_step needs at least one policy");
  if (current) {
    check_policies(current->k(), policies);
    if (current->size() != data.size()) throw DataError("current assignment does not match the dataset");
  }
  std::vector<std::size_t> labels(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    const Trajectory& t = data.trajectories[i];
    std::size_t best = 0;
    double best_score = policies[0]->log_likelihood(t);
    for (std::size_t j = 1; j < policies.size(); ++j) {
      const double s = policies[j]->log_likelihood(t);
      if (s > best_score) {
        best = j;
        best_score = s;
      }
    }
    if (current && best != (*current)[i] && policies[(*current)[i]]->log_likelihood(t) == best_score)
      best = (*current)[i];
    labels[i] = best;
  });
  return {std::move(labels), policies.size()};
}

std::vector<PolicyPtr> m_step(const Dataset& data, const ClusterAssignment& assignment, policy::Family family,
                              const policy::FitConfig& fit, unsigned jobs) {
  if (assignment.size() != data.size()) throw DataError("assignment does not match the dataset");
  const auto members = assignment.members();
  std::vector<PolicyPtr> out(assignment.k());
  parallel_for(assignment.k(), jobs,
               [&](std::size_t j) { out[j] = fit_cluster(data, members[j], family, cluster_fit(fit, j)); });
  return out;
}

MergeResult merge(const Dataset& data, const ClusterAssignment& assignment, std::vector<PolicyPtr> policies,
                  std::size_t k_star, policy::Family family, const policy::FitConfig& fit, MergeCriterion criterion) {
  check_policies(assignment.k(), policies);
  if (k_star == 0) throw DataError("k_star must be at least 1");
  if (k_star > assignment.k())
    throw DataError("cannot merge " + std::to_string(assignment.k()) + " clusters up to k_star = " +
                    std::to_string(k_star));

  MergeResult result;
  auto clusters = assignment.members();
  while (clusters.size() > k_star) {
    const std::size_t k = clusters.size();
    // cross[i][j] = sum over D_j of log P(tau | theta_i)
    std::vector<std::vector<double>> cross(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        for (auto idx : clusters[j]) cross[i][j] += policies[i]->log_likelihood(data.trajectories[idx]);
      }
    std::size_t bi = 0, bj = 1;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        const bool better = criterion == MergeCriterion::most_compatible ? cross[i][j] > cross[bi][bj]
                                                                         : cross[i][j] < cross[bi][bj];
        if (better) {
          bi = i;
          bj = j;
        }
      }
    result.merges.emplace_back(bi, bj);
    auto& target = clusters[bi];
    target.insert(target.end(), clusters[bj].begin(), clusters[bj].end());
    std::sort(target.begin(), target.end());
    policies[bi] = fit_cluster(data, target, family, cluster_fit(fit, bi));
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    policies.erase(policies.begin() + static_cast<std::ptrdiff_t>(bj));
  }

  std::vector<std::size_t> labels(assignment.size());
  for (std::size_t j = 0; j < clusters.size(); ++j)
    for (auto idx : clusters[j]) labels[idx] = j;
  result.assignment = ClusterAssignment(std::move(labels), clusters.size());
  result.policies = std::move(policies);
  return result;
}

PgkRun run(const Dataset& data, const PgkConfig& config) {
  if (config.k == 0) throw DataError("k must be at least 1");
  if (config.max_iters == 0) throw DataError("max_iters must be at least 1");
  if (data.size() == 0) throw DataError("cannot cluster an empty dataset");
  const auto start = std::chrono::steady_clock::now();

  PgkRun out;
  out.seed = config.seed;
  Rng rng = make_rng({config.seed, 0x504b4dULL});
  ClusterAssignment w = config.init == InitMode::likelihood_spread ? spread_assignment(data, config, rng)
                                                                    : random_assignment(data.size(), config.k, rng);
  out.history.push_back(w);

  std::vector<PolicyPtr> policies;
  for (std::size_t t = 1; t <= config.max_iters; ++t) {
    policy::FitConfig fit = config.fit;
    fit.seed = derive_seed({config.fit.seed, config.seed, t});
    policies = m_step(data, w, config.family, fit, config.jobs);
    out.objective.push_back(objective(data, w, policies));
    double prior = 0.0;
    for (const auto& p : policies) prior += p->log_prior();
    out.penalized_objective.push_back(out.objective.back() + prior);

    ClusterAssignment next = e_step(data, policies, &w, config.jobs);
    out.iterations = t;
    const bool unchanged = next == w;
    out.history.push_back(next);
    w = std::move(next);
    if (unchanged) {
      out.converged = true;
      break;
    }
  }

  if (config.k_star && *config.k_star < w.k()) {
    auto merged = merge(data, w, std::move(policies), *config.k_star, config.family, config.fit, config.merge);
    w = std::move(merged.assignment);
    policies = std::move(merged.policies);
  } else if (config.k_star && *config.k_star > w.k()) {
    throw DataError("k_star exceeds k");
  }
  out.final_objective = objective(data, w, policies);
  out.assignment = std::move(w);
  out.policies = std::move(policies);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

PgkRun best_of_n(const Dataset& data, std::size_t n, const PgkConfig& config) {
  if (n == 0) throw DataError("best_of_n needs n >= 1");
  const auto start = std::chrono::steady_clock::now();
  std::vector<PgkRun> runs(n);
  PgkConfig inner = config;
  inner.jobs = 1;
  parallel_for(n, config.jobs, [&](std::size_t r) {
    PgkConfig c = inner;
    c.seed = r == 0 ? config.seed : derive_seed({config.seed, r});
    runs[r] = run(data, c);
  });
  std::size_t best = 0;
  std::vector<double> finals;
  for (std::size_t r = 0; r < n; ++r) {
    finals.push_back(runs[r].final_objective);
    if (runs[r].final_objective > runs[best].final_objective) best = r;
  }
  PgkRun out = std::move(runs[best]);
  out.candidate_objectives = std::move(finals);
  out.chosen_run = best;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace trajclust::pgk
