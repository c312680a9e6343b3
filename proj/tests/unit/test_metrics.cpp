#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "trajclust/metrics.hpp"

using namespace trajclust;
using namespace trajclust::metrics;

TEST_CASE("nmi examples") {
  using V = std::vector<std::size_t>;
  CHECK(nmi(V{0, 0, 1, 1}, V{1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(nmi(V{0, 1, 0, 1}, V{0, 0, 1, 1}) == doctest::Approx(0.0));
  CHECK(nmi(V{0, 0, 0}, V{2, 2, 2}) == 1.0);
  CHECK(nmi(V{0, 0, 0}, V{0, 1, 2}) == 0.0);
  CHECK_THROWS_AS(nmi(V{0}, V{0, 1}), DataError);
  CHECK_THROWS_AS(nmi(V{}, V{}), DataError);
  std::vector<int> neg{-1, 0};
  CHECK_THROWS_AS(nmi(neg, neg), DataError);
}

TEST_CASE("nmi agrees with the oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 60, a = 1 + rng() % 6, b = 1 + rng() % 6;
    std::vector<std::size_t> x(n), y(n);
    for (auto& v : x) v = rng() % a;
    for (auto& v : y) v = rng() % b;
    const double got = nmi(x, y);
    CHECK(std::abs(got - oracle::nmi(x, y)) <= 1e-10);
    CHECK(std::abs(got - nmi(y, x)) <= 1e-12);
    CHECK(got >= -1e-12);
    CHECK(got <= 1 + 1e-12);
  }
}

TEST_CASE("canonicalize") {
  std::vector<std::size_t> l{5, 5, 2, 9, 2};
  CHECK(canonicalize(l) == std::vector<std::size_t>{0, 0, 1, 2, 1});
}

TEST_CASE("kmeans") {
  std::vector<std::vector<double>> pts;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0, 0.1);
  std::vector<std::size_t> truth;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 20; ++i) {
      pts.push_back({c * 10 + noise(rng), noise(rng)});
      truth.push_back(static_cast<std::size_t>(c));
    }
  const auto r = kmeans(pts, 3, 0);
  CHECK(nmi(r.labels, truth) == doctest::Approx(1.0));
  for (std::size_t i = 1; i < r.inertia_curve.size(); ++i) CHECK(r.inertia_curve[i] <= r.inertia_curve[i - 1] + 1e-9);
  CHECK(r.inertia == doctest::Approx(r.inertia_curve.back()));
  CHECK_THROWS_AS(kmeans(pts, 0, 0), DataError);
  CHECK_THROWS_AS(kmeans({{1.0}, {1.0}}, 2, 0), DataError);
}

TEST_CASE("return baseline") {
  const Dataset d = generate(envs::EnvId::diagonal, 5, 1);
  CHECK_THROWS_AS(return_kmeans_baseline(d, 5), NotApplicable);
}

TEST_CASE("reports round trip") {
  const std::vector<std::size_t> w{0, 1, 1, 0}, truth{1, 0, 0, 1};
  const std::vector<double> curve{-10, -5};
  ClusterReport r = cluster_report(w, 2, std::span<const std::size_t>(truth), curve);
  CHECK(r.sizes == std::vector<std::size_t>{2, 2});
  CHECK(*r.nmi == doctest::Approx(1.0));
  r.run_id = "a";
  r.method = "pgkmeans";
  r.env = "takeball";
  r.k_star = 2;
  r.objective = -5;
  r.wall_seconds = 0.25;
  CHECK(parse_report_line(to_json_line(r)) == r);

  const auto path = std::filesystem::temp_directory_path() / "trajclust_reports.jsonl";
  std::filesystem::remove(path);
  append_report(r, path);
  ClusterReport s = r;
  s.nmi.reset();
  s.k_star.reset();
  append_report(s, path);
  const auto back = read_reports(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == r);
  CHECK(back[1] == s);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(parse_report_line("{not json"), DataError);
}

TEST_CASE("small worked examples") {
  using V = std::vector<std::size_t>;
  CHECK(nmi(V{0, 1, 2, 2}, V{0, 1, 2, 2}) == doctest::Approx(1.0));
  CHECK(nmi(V{2, 0, 1, 1}, V{0, 1, 2, 2}) == doctest::Approx(1.0));

  std::vector<std::vector<double>> blobs{{0.0}, {0.1}, {-0.1}, {50.0}, {50.2}};
  const auto two = kmeans(blobs, 2, 1);
  CHECK(two.labels[0] == two.labels[1]);
  CHECK(two.labels[1] == two.labels[2]);
  CHECK(two.labels[3] == two.labels[4]);
  CHECK(two.labels[0] != two.labels[3]);
  for (auto l : kmeans(blobs, 1, 1).labels) CHECK(l == 0);

  Dataset d;
  d.meta.env = "bandit";
  for (double r : {0.0, 0.0, 10.0, 10.0}) {
    Trajectory t;
    t.steps.push_back(make_step(Observation::symbol(0), 0, r));
    d.trajectories.push_back(t);
  }
  const auto labels = return_kmeans_baseline(d, 2);
  CHECK(nmi(labels, V{0, 0, 1, 1}) == doctest::Approx(1.0));

  const auto no_truth = cluster_report(V{0, 1, 2, 3, 0, 1, 2, 3}, 4);
  CHECK_FALSE(no_truth.nmi.has_value());
  CHECK(no_truth.sizes == V{2, 2, 2, 2});
  const V truth{1, 2, 3, 0, 1, 2, 3, 0};
  CHECK(*cluster_report(V{0, 1, 2, 3, 0, 1, 2, 3}, 4, std::span<const std::size_t>(truth)).nmi == doctest::Approx(1.0));
  CHECK(to_json_line(no_truth).find("\"nmi\":null") != std::string::npos);
}
