#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "trajclust/dataset.hpp"

/// Conflict graphs over trajectories and their K-coloring view.
namespace trajclust::coloring {

using Edge = std::pair<std::uint32_t, std::uint32_t>;

/// Simple undirected graph; edges are stored once with u < v, sorted.
class Graph {
 public:
  Graph() = default;
  explicit Graph(std::size_t n) : n_(n) {}
  /// Throws DataError on self-loops or out-of-range endpoints. Duplicate
  /// edges collapse.
  Graph(std::size_t n, std::vector<Edge> edges);

  std::size_t size() const { return n_; }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  bool has_edge(std::size_t u, std::size_t v) const;
  std::vector<std::vector<std::uint32_t>> adjacency() const;
  std::vector<std::size_t> degrees() const;
  std::size_t max_degree() const;

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
};

/// Nodes are trajectories, edges are conflicts.
using ConflictGraph = Graph;
/// The graph handed to the reduction.
using InputGraph = Graph;

/// L-infinity tolerance above which two continuous actions differ.
inline constexpr double kActionTolerance = 1e-6;

/// 1 iff some state key occurs in both trajectories with different actions.
/// Equal trajectories never conflict.
int conflict(const Trajectory& a, const Trajectory& b, double tolerance = kActionTolerance);

/// All conflicting pairs, found through a per-state-key inverted index.
ConflictGraph build_graph(const Dataset& data, double tolerance = kActionTolerance, unsigned jobs = 1);

struct Validity {
  bool valid = true;
  /// A monochromatic edge when invalid.
  std::optional<Edge> witness;
};

/// D(W) = 0: no edge has both endpoints in the same cluster.
Validity clustering_valid(const Graph& graph, std::span<const std::size_t> assignment);

enum class ReductionMode : std::uint8_t {
  /// Smallest state index that is fresh for both endpoints and whose reuse
  /// adds no conflict outside the input edge set.
  conflict_safe,
  /// Smallest state index fresh for both endpoints only. Can create extra
  /// conflicts between trajectories of disjoint edges.
  literal,
};

/// Builds one trajectory per vertex: for each edge (i < j) a shared state
/// with action 0 in t_i and action 1 in t_j, then pads every trajectory to
/// length `horizon` with states unique to it (action 0). Throws DataError
/// when horizon <= max degree.
Dataset reduce_from_graph(const Graph& graph, std::size_t horizon,
                          ReductionMode mode = ReductionMode::conflict_safe);

/// The two-state, two-action contextual bandit: trajectories
/// [(s1,a1)], [(s1,a2)], [(s2,a1)], [(s2,a2)].
Dataset bandit_dataset();

struct ColoringResult {
  /// Proper coloring with colors < k, or empty when none was found.
  std::optional<std::vector<std::size_t>> colors;
  /// False when the greedy fallback was used; then "no coloring" is not a proof.
  bool exact = true;
};

inline constexpr std::size_t kExactColoringLimit = 30;
inline constexpr std::size_t kEnumerationLimit = 12;

/// Exact backtracking (vertices in decreasing degree order) for up to
/// kExactColoringLimit nodes, greedy largest-degree-first above.
ColoringResult color(const Graph& graph, std::size_t k);

/// Every partition of the nodes into at most k blocks without a
/// monochromatic edge, each given once as a restricted growth string (block
/// ids in order of first appearance). Throws DataError above
/// kEnumerationLimit nodes.
std::vector<std::vector<std::size_t>> enumerate_partitions(const Graph& graph, std::size_t k);

/// Edge-list text: "N M" then M lines "u v", 0-based. Errors carry the line.
Graph read_edge_list(std::istream& in, const std::string& source = "<stream>");
void write_edge_list(const Graph& graph, std::ostream& out);
Graph load_graph(const std::filesystem::path& path);
void save_graph(const Graph& graph, const std::filesystem::path& path);

}  // namespace trajclust::coloring
