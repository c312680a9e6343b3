#include "trajclust/coloring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace trajclust::coloring {

namespace {

bool actions_differ(const Step& a, const Step& b, double tolerance) {
  if (a.real_action.empty() && b.real_action.empty()) return a.action != b.action;
  if (a.real_action.size() != b.real_action.size()) return true;
  for (std::size_t i = 0; i < a.real_action.size(); ++i)
    if (std::abs(a.real_action[i] - b.real_action[i]) > tolerance) return true;
  return false;
}

Edge ordered(std::size_t u, std::size_t v) {
  return u < v ? Edge{static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v)}
               : Edge{static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(u)};
}

[[noreturn]] void edge_list_error(const std::string& source, std::size_t line, const std::string& what) {
  throw DataError(source + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Graph::Graph(std::size_t n, std::vector<Edge> edges) : n_(n) {
  for (auto& e : edges) {
    if (e.first == e.second) throw DataError("self-loop at node " + std::to_string(e.first));
    if (e.first >= n || e.second >= n)
      throw DataError("edge (" + std::to_string(e.first) + ", " + std::to_string(e.second) + ") out of range for " +
                      std::to_string(n) + " nodes");
    e = ordered(e.first, e.second);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);
}

bool Graph::has_edge(std::size_t u, std::size_t v) const {
  if (u == v) return false;
  return std::binary_search(edges_.begin(), edges_.end(), ordered(u, v));
}

std::vector<std::vector<std::uint32_t>> Graph::adjacency() const {
  std::vector<std::vector<std::uint32_t>> adj(n_);
  for (auto [u, v] : edges_) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  return adj;
}

std::vector<std::size_t> Graph::degrees() const {
  std::vector<std::size_t> deg(n_, 0);
  for (auto [u, v] : edges_) {
    ++deg[u];
    ++deg[v];
  }
  return deg;
}

std::size_t Graph::max_degree() const {
  const auto deg = degrees();
  return deg.empty() ? 0 : *std::max_element(deg.begin(), deg.end());
}

int conflict(const Trajectory& a, const Trajectory& b, double tolerance) {
  if (a == b) return 0;
  std::unordered_multimap<StateKey, const Step*> index;
  for (const auto& s : a.steps) index.emplace(s.key, &s);
  for (const auto& s : b.steps) {
    auto [lo, hi] = index.equal_range(s.key);
    for (auto it = lo; it != hi; ++it)
      if (actions_differ(*it->second, s, tolerance)) return 1;
  }
  return 0;
}

ConflictGraph build_graph(const Dataset& data, double tolerance, unsigned jobs) {
  // key -> (trajectory, step) occurrences, one per distinct action per trajectory
  std::unordered_map<StateKey, std::vector<std::pair<std::uint32_t, const Step*>>> buckets;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (const auto& s : data.trajectories[i].steps) {
      auto& bucket = buckets[s.key];
      const bool seen = std::any_of(bucket.rbegin(), bucket.rend(), [&](const auto& e) {
        return e.first == i && !actions_differ(*e.second, s, tolerance);
      });
      if (!seen) bucket.emplace_back(static_cast<std::uint32_t>(i), &s);
    }
  }
  std::vector<const std::vector<std::pair<std::uint32_t, const Step*>>*> work;
  for (const auto& [key, bucket] : buckets)
    if (bucket.size() > 1) work.push_back(&bucket);

  std::vector<std::vector<Edge>> found(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t w) {
    const auto& bucket = *work[w];
    auto& out = found[w];
    const bool discrete = bucket.front().second->real_action.empty();
    if (discrete) {
      std::map<int, std::vector<std::uint32_t>> by_action;
      for (const auto& [traj, step] : bucket) by_action[step->action].push_back(traj);
      if (by_action.size() < 2) return;
      for (auto a = by_action.begin(); a != by_action.end(); ++a)
        for (auto b = std::next(a); b != by_action.end(); ++b)
          for (auto u : a->second)
            for (auto v : b->second)
              if (u != v) out.push_back(ordered(u, v));
    } else {
      for (std::size_t x = 0; x < bucket.size(); ++x)
        for (std::size_t y = x + 1; y < bucket.size(); ++y)
          if (bucket[x].first != bucket[y].first && actions_differ(*bucket[x].second, *bucket[y].second, tolerance))
            out.push_back(ordered(bucket[x].first, bucket[y].first));
    }
  });

  std::vector<Edge> edges;
  for (auto& f : found) edges.insert(edges.end(), f.begin(), f.end());
  // Equal trajectories never conflict, even when internally inconsistent.
  std::erase_if(edges, [&](const Edge& e) { return data.trajectories[e.first] == data.trajectories[e.second]; });
  return Graph(data.size(), std::move(edges));
}

Validity clustering_valid(const Graph& graph, std::span<const std::size_t> assignment) {
  if (assignment.size() != graph.size())
    throw DataError("assignment has " + std::to_string(assignment.size()) + " labels for " +
                    std::to_string(graph.size()) + " nodes");
  for (const auto& e : graph.edges())
    if (assignment[e.first] == assignment[e.second]) return {false, e};
  return {};
}

Dataset reduce_from_graph(const Graph& graph, std::size_t horizon, ReductionMode mode) {
  const std::size_t d = graph.max_degree();
  if (horizon <= d)
    throw DataError("horizon " + std::to_string(horizon) + " must exceed the maximum degree " + std::to_string(d));
  const std::size_t n = graph.size();
  constexpr int a1 = 0, a2 = 1;

  // t[i]: (state, action) pairs; users[l]: (trajectory, action) holding s_l
  std::vector<std::vector<std::pair<std::uint32_t, int>>> t(n);
  std::vector<std::set<std::uint32_t>> states(n);
  std::vector<std::vector<std::pair<std::size_t, int>>> users;

  auto safe = [&](std::uint32_t l, std::size_t i, std::size_t j) {
    if (states[i].contains(l) || states[j].contains(l)) return false;
    if (mode == ReductionMode::literal || l >= users.size()) return true;
    // t_i gets a1, t_j gets a2: every existing holder with the other action
    // must already be adjacent.
    for (auto [k, a] : users[l]) {
      if (a == a1 && !graph.has_edge(k, j)) return false;
      if (a == a2 && !graph.has_edge(k, i)) return false;
    }
    return true;
  };

  for (auto [i, j] : graph.edges()) {
    std::uint32_t l = 0;
    while (!safe(l, i, j)) ++l;
    if (l >= users.size()) users.resize(l + 1);
    t[i].emplace_back(l, a1);
    t[j].emplace_back(l, a2);
    states[i].insert(l);
    states[j].insert(l);
    users[l].emplace_back(i, a1);
    users[l].emplace_back(j, a2);
  }

  Dataset out;
  out.meta.env = "reduction";
  const auto base = static_cast<std::uint32_t>(users.size());
  for (std::size_t i = 0; i < n; ++i) {
    Trajectory traj;
    for (auto [l, a] : t[i]) traj.steps.push_back(make_step(Observation::symbol(l), a));
    for (std::size_t pos = traj.size(); pos < horizon; ++pos) {
      const auto filler = static_cast<std::uint32_t>(base + i * horizon + pos);
      traj.steps.push_back(make_step(Observation::symbol(filler), a1));
    }
    out.trajectories.push_back(std::move(traj));
  }
  return out;
}

Dataset bandit_dataset() {
  Dataset out;
  out.meta.env = "bandit";
  for (std::uint32_t s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) out.trajectories.push_back({{make_step(Observation::symbol(s), a)}});
  return out;
}

ColoringResult color(const Graph& graph, std::size_t k) {
  const std::size_t n = graph.size();
  if (k == 0) return {n == 0 ? std::optional<std::vector<std::size_t>>(std::vector<std::size_t>{}) : std::nullopt, true};
  const auto adj = graph.adjacency();
  const auto deg = graph.degrees();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return deg[a] > deg[b]; });

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> colors(n, kNone);
  auto allowed = [&](std::size_t v, std::size_t c) {
    return std::none_of(adj[v].begin(), adj[v].end(), [&](std::uint32_t u) { return colors[u] == c; });
  };

  if (n > kExactColoringLimit) {
    for (auto v : order) {
      std::size_t c = 0;
      while (c < k && !allowed(v, c)) ++c;
      if (c == k) return {std::nullopt, false};
      colors[v] = c;
    }
    return {colors, false};
  }

  // Colors are introduced in order (at most one new color per vertex), which
  // prunes relabelled duplicates of the same partial assignment.
  auto solve = [&](auto&& self, std::size_t pos, std::size_t used) -> bool {
    if (pos == n) return true;
    const std::size_t v = order[pos];
    for (std::size_t c = 0; c < std::min(k, used + 1); ++c) {
      if (!allowed(v, c)) continue;
      colors[v] = c;
      if (self(self, pos + 1, std::max(used, c + 1))) return true;
      colors[v] = kNone;
    }
    return false;
  };
  if (!solve(solve, 0, 0)) return {std::nullopt, true};
  return {colors, true};
}

std::vector<std::vector<std::size_t>> enumerate_partitions(const Graph& graph, std::size_t k) {
  const std::size_t n = graph.size();
  if (n > kEnumerationLimit)
    throw DataError("enumerate_partitions supports at most " + std::to_string(kEnumerationLimit) + " nodes, got " +
                    std::to_string(n));
  std::vector<std::vector<std::size_t>> out;
  if (n == 0) {
    out.emplace_back();
    return out;
  }
  if (k == 0) return out;
  const auto adj = graph.adjacency();
  std::vector<std::size_t> rgs(n, 0);
  auto extend = [&](auto&& self, std::size_t v, std::size_t blocks) -> void {
    if (v == n) {
      out.push_back(rgs);
      return;
    }
    for (std::size_t c = 0; c < std::min(k, blocks + 1); ++c) {
      const bool clash = std::any_of(adj[v].begin(), adj[v].end(), [&](std::uint32_t u) { return u < v && rgs[u] == c; });
      if (clash) continue;
      rgs[v] = c;
      self(self, v + 1, std::max(blocks, c + 1));
    }
  };
  extend(extend, 0, 0);
  return out;
}

Graph read_edge_list(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  };
  auto parse_pair = [&](long long& a, long long& b) {
    std::istringstream ss(line);
    std::string extra;
    if (!(ss >> a >> b) || (ss >> extra)) edge_list_error(source, lineno, "expected two integers, got \"" + line + "\"");
    if (a < 0 || b < 0) edge_list_error(source, lineno, "negative value");
  };

  if (!next_line()) edge_list_error(source, lineno + 1, "missing \"N M\" header");
  long long n = 0, m = 0;
  parse_pair(n, m);
  std::vector<Edge> edges;
  for (long long e = 0; e < m; ++e) {
    if (!next_line()) edge_list_error(source, lineno + 1, "expected " + std::to_string(m) + " edges, found " + std::to_string(e));
    long long u = 0, v = 0;
    parse_pair(u, v);
    if (u >= n || v >= n) edge_list_error(source, lineno, "node out of range [0, " + std::to_string(n) + ")");
    if (u == v) edge_list_error(source, lineno, "self-loop at node " + std::to_string(u));
    edges.push_back(ordered(static_cast<std::size_t>(u), static_cast<std::size_t>(v)));
  }
  if (next_line()) edge_list_error(source, lineno, "trailing content after " + std::to_string(m) + " edges");
  return Graph(static_cast<std::size_t>(n), std::move(edges));
}

void write_edge_list(const Graph& graph, std::ostream& out) {
  out << graph.size() << ' ' << graph.edge_count() << '\n';
  for (auto [u, v] : graph.edges()) out << u << ' ' << v << '\n';
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return read_edge_list(in, path.string());
}

void save_graph(const Graph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_edge_list(graph, out);
}

}  // namespace trajclust::coloring
