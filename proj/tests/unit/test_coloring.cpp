#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "trajclust/coloring.hpp"
#include "trajclust/pgkmeans.hpp"

using namespace trajclust;
using namespace trajclust::coloring;

namespace {

Graph random_graph(std::mt19937_64& rng, std::size_t n, std::size_t max_degree) {
  std::vector<std::size_t> deg(n, 0);
  std::vector<Edge> edges;
  for (std::uint32_t u = 0; u < n; ++u)
    for (std::uint32_t v = u + 1; v < n; ++v)
      if (rng() % 3 == 0 && deg[u] < max_degree && deg[v] < max_degree) {
        edges.emplace_back(u, v);
        ++deg[u];
        ++deg[v];
      }
  return Graph(n, edges);
}

}  // namespace

TEST_CASE("graph normalisation") {
  const Graph g(3, {{2, 1}, {1, 2}, {0, 1}});
  CHECK(g.edges() == std::vector<Edge>{{0, 1}, {1, 2}});
  CHECK(g.has_edge(2, 1));
  CHECK(g.max_degree() == 2);
  CHECK_THROWS_AS(Graph(2, {{1, 1}}), DataError);
  CHECK_THROWS_AS(Graph(2, {{0, 2}}), DataError);
}

TEST_CASE("conflict") {
  auto t = [](std::initializer_list<std::pair<std::uint32_t, int>> s) {
    Trajectory out;
    for (auto [o, a] : s) out.steps.push_back(make_step(Observation::symbol(o), a));
    return out;
  };
  CHECK(conflict(t({{0, 0}, {1, 1}}), t({{1, 0}})) == 1);
  CHECK(conflict(t({{0, 0}}), t({{1, 1}})) == 0);
  CHECK(conflict(t({{0, 0}, {0, 1}}), t({{0, 0}, {0, 1}})) == 0);
  Trajectory a, b;
  a.steps.push_back(make_real_step(Observation::real({0.5}), {0.1}));
  b.steps.push_back(make_real_step(Observation::real({0.5}), {0.1 + 1e-9}));
  CHECK(conflict(a, b) == 0);
  b.steps[0].real_action = {0.2};
  CHECK(conflict(a, b) == 1);
}

TEST_CASE("inverted index matches pairwise conflicts") {
  const Dataset d = generate(envs::EnvId::diagonal, 15, 2);
  const Graph g = build_graph(d);
  CHECK(build_graph(d, kActionTolerance, 3) == g);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j)
      CHECK(g.has_edge(i, j) == (conflict(d.trajectories[i], d.trajectories[j]) == 1));
}

TEST_CASE("reduction round trip") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 2 + rng() % 11, d = 1 + rng() % 4;
    const Graph g = random_graph(rng, n, d);
    const Dataset data = reduce_from_graph(g, d + 1);
    CHECK(data.size() == n);
    for (const auto& t : data.trajectories) CHECK(t.size() == d + 1);
    CHECK(build_graph(data) == g);
  }
  const Graph g(2, {{0, 1}});
  CHECK_THROWS_AS(reduce_from_graph(g, 1), DataError);
}

TEST_CASE("literal reduction can add conflicts") {
  // two disjoint edges: the literal rule reuses state 0 for both, so the
  // endpoints of different edges also conflict
  const Graph g(4, {{0, 1}, {2, 3}});
  const Dataset lit = reduce_from_graph(g, 2, ReductionMode::literal);
  CHECK(build_graph(lit).edge_count() > g.edge_count());
  CHECK(build_graph(reduce_from_graph(g, 2)) == g);
}

TEST_CASE("valid clusterings are colorings") {
  const Graph g(3, {{0, 1}, {1, 2}});
  CHECK(clustering_valid(g, std::vector<std::size_t>{0, 1, 0}).valid);
  const auto bad = clustering_valid(g, std::vector<std::size_t>{0, 0, 1});
  CHECK_FALSE(bad.valid);
  CHECK(*bad.witness == Edge{0, 1});
}

TEST_CASE("exact coloring") {
  const Graph triangle(3, {{0, 1}, {1, 2}, {0, 2}});
  CHECK_FALSE(color(triangle, 2).colors);
  const auto c3 = color(triangle, 3);
  REQUIRE(c3.colors);
  CHECK(clustering_valid(triangle, *c3.colors).valid);
  CHECK(c3.exact);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = random_graph(rng, 9, 4);
    for (std::size_t k = 1; k <= 4; ++k) {
      const auto res = color(g, k);
      CHECK(res.colors.has_value() == !enumerate_partitions(g, k).empty());
      if (res.colors) CHECK(clustering_valid(g, *res.colors).valid);
    }
  }
}

TEST_CASE("partition enumeration") {
  CHECK(enumerate_partitions(Graph(3), 3).size() == 5);  // Bell(3)
  CHECK(enumerate_partitions(Graph(3), 2).size() == 4);
  CHECK(enumerate_partitions(Graph(2, {{0, 1}}), 2).size() == 1);
  CHECK_THROWS_AS(enumerate_partitions(Graph(13), 2), DataError);
}

TEST_CASE("bandit has exactly two valid 2-clusterings") {
  const Dataset d = bandit_dataset();
  REQUIRE(d.size() == 4);
  const Graph g = build_graph(d);
  CHECK(g.edge_count() == 2);
  CHECK(enumerate_partitions(g, 2).size() == 2);
}

TEST_CASE("edge list io") {
  const Graph g(4, {{0, 3}, {1, 2}});
  std::stringstream s;
  write_edge_list(g, s);
  CHECK(read_edge_list(s) == g);
  std::istringstream bad("3 2\n0 1\n1 x\n");
  try {
    read_edge_list(bad, "g.txt");
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("g.txt:3") != std::string::npos);
  }
  std::istringstream loop("2 1\n1 1\n");
  CHECK_THROWS_AS(read_edge_list(loop), DataError);
}

TEST_CASE("small worked examples") {
  const Dataset single = generate(envs::EnvId::takeball, std::vector<int>{2}, 30, 1);
  CHECK(build_graph(single).edge_count() == 0);

  const Dataset bandit = bandit_dataset();
  CHECK(build_graph(bandit).edges() == std::vector<Edge>{{0, 1}, {2, 3}});
  // no triangle inequality: d(x,y)=1 but d(x,z)+d(z,y)=0
  CHECK(conflict(bandit.trajectories[0], bandit.trajectories[1]) == 1);
  CHECK(conflict(bandit.trajectories[0], bandit.trajectories[2]) + conflict(bandit.trajectories[2], bandit.trajectories[1]) == 0);
  const auto parts = enumerate_partitions(build_graph(bandit), 2);
  const std::set<std::vector<std::size_t>> want{{0, 1, 0, 1}, {0, 1, 1, 0}};
  CHECK(std::set<std::vector<std::size_t>>(parts.begin(), parts.end()) == want);

  const Dataset gt = generate(envs::EnvId::takeball, 50, 3);
  std::vector<std::size_t> labels(gt.labels->begin(), gt.labels->end());
  CHECK(clustering_valid(build_graph(gt), labels).valid);

  CHECK(clustering_valid(Graph(4), std::vector<std::size_t>{0, 0, 0, 0}).valid);
  CHECK(build_graph(reduce_from_graph(Graph(3), 1)).edge_count() == 0);

  const Graph k3(3, {{0, 1}, {1, 2}, {0, 2}});
  const Graph k3_back = build_graph(reduce_from_graph(k3, 3));
  CHECK_FALSE(color(k3_back, 2).colors);
  CHECK(color(k3_back, 3).colors);

  const Graph c6(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}});
  const auto c = color(c6, 2);
  REQUIRE(c.colors);
  CHECK(clustering_valid(c6, *c.colors).valid);

  CHECK(enumerate_partitions(Graph(2), 2).size() == 2);
}
