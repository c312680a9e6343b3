#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajclust/common.hpp"
#include "trajclust/dataset.hpp"

/// Clustering quality (NMI), k-means baselines and run reports.
namespace trajclust::metrics {

/// Relabels to 0..L-1 in order of first appearance.
std::vector<std::size_t> canonicalize(std::span<const std::size_t> labels);

/// 2 I(C, L) / (H(C) + H(L)) with natural logs. Both entropies zero gives 1,
/// exactly one zero gives 0. Throws DataError on length mismatch or N = 0.
double nmi(std::span<const std::size_t> pred, std::span<const std::size_t> truth);
double nmi(std::span<const int> pred, std::span<const int> truth);

struct KmeansConfig {
  std::size_t restarts = 10;
  std::size_t max_iters = 100;
};

struct KmeansResult {
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> centers;
  double inertia = 0.0;
  /// Within-cluster sum of squares after each Lloyd iteration of the
  /// winning restart.
  std::vector<double> inertia_curve;
};

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia.
/// Throws DataError unless 1 <= k <= number of distinct points.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                    const KmeansConfig& config = {});

/// k-means on scalar episode returns. Throws NotApplicable when every
/// trajectory has the same return (constant-reward environments).
std::vector<std::size_t> return_kmeans_baseline(const Dataset& data, std::size_t k, std::uint64_t seed = 0);

struct ClusterReport {
  std::string run_id;
  std::string method;
  std::string env;
  std::size_t k = 0;
  std::optional<std::size_t> k_star;
  std::uint64_t seed = 0;
  std::optional<double> nmi;
  std::size_t iterations = 0;
  /// Final J (pgkmeans) or final loss (caae).
  std::optional<double> objective;
  std::vector<double> curve;
  bool converged = false;
  double wall_seconds = 0.0;
  std::vector<std::size_t> sizes;

  friend bool operator==(const ClusterReport&, const ClusterReport&) = default;
};

/// Cluster sizes, NMI when truth is given, and the objective curve.
ClusterReport cluster_report(std::span<const std::size_t> assignment, std::size_t k,
                             std::optional<std::span<const std::size_t>> truth = std::nullopt,
                             std::span<const double> curve = {});

/// One JSON object per line.
std::string to_json_line(const ClusterReport& report);
ClusterReport parse_report_line(const std::string& line);
void append_report(const ClusterReport& report, const std::filesystem::path& path);
std::vector<ClusterReport> read_reports(const std::filesystem::path& path);

}  // namespace trajclust::metrics
