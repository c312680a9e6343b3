#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "trajclust/dataset.hpp"
#include "trajclust/metrics.hpp"

using namespace trajclust;

namespace {

std::string serialize(const Dataset& d) {
  std::ostringstream out;
  write_dataset(d, out);
  return out.str();
}

std::filesystem::path temp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("generate is balanced and labelled by expert") {
  const Dataset d = generate(envs::EnvId::takeball, 10, 7);
  REQUIRE(d.size() == 40);
  REQUIRE(d.labeled());
  for (int e = 0; e < 4; ++e) CHECK(std::count(d.labels->begin(), d.labels->end(), e) == 10);
  for (const auto& t : d.trajectories) {
    CHECK(t.size() >= 1);
    CHECK(t.size() <= 40);
    for (const auto& s : t.steps) {
      CHECK(s.action >= 0);
      CHECK(s.action < 5);
      CHECK(s.reward == 0.0);
    }
  }
}

TEST_CASE("generate is deterministic and independent of jobs") {
  const Dataset a = generate(envs::EnvId::diagonal, 15, 3, 1);
  const Dataset b = generate(envs::EnvId::diagonal, 15, 3, 1);
  const Dataset c = generate(envs::EnvId::diagonal, 15, 3, 4);
  CHECK(serialize(a) == serialize(b));
  CHECK(serialize(a) == serialize(c));
  CHECK(serialize(a) != serialize(generate(envs::EnvId::diagonal, 15, 4)));
}

TEST_CASE("generate rejects unknown experts") {
  CHECK_THROWS_AS(generate(envs::EnvId::takeball, std::vector<int>{4}, 3, 0), DataError);
  CHECK_THROWS_AS(generate(envs::EnvId::takeball, {0}, 0, 0), DataError);
}

TEST_CASE("full-scale diagonal count") {
  // the evaluation-size dataset: 5 experts x 20000 episodes
  const Dataset d = generate(envs::EnvId::diagonal, 20000, 0);
  CHECK(d.size() == 100000);
}

TEST_CASE("save/load round trip") {
  const auto path = temp("trajclust_ds_test.jsonl");
  SUBCASE("empty") {
    Dataset empty;
    empty.meta.env = "takeball";
    save(empty, path);
    CHECK(load(path) == empty);
  }
  SUBCASE("1000 takeball trajectories") {
    const Dataset d = generate(envs::EnvId::takeball, 250, 11);
    save(d, path);
    CHECK(load(path) == d);
  }
  SUBCASE("extra and pathfollowing") {
    for (auto env : {envs::EnvId::extra, envs::EnvId::pathfollowing}) {
      const Dataset d = generate(env, 5, 2);
      save(d, path);
      CHECK(load(path) == d);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("load reports malformed records with their index and line") {
  const auto path = temp("trajclust_ds_bad.jsonl");
  const Dataset d = generate(envs::EnvId::takeball, 2, 1);
  std::string text = serialize(d);
  // drop the tail of the last record
  text.resize(text.size() - 20);
  {
    std::ofstream out(path);
    out << text;
  }
  try {
    load(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("record 7") != std::string::npos);
    CHECK(msg.find(":9:") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << R"({"format":"trajclust-v0","env":"takeball","experts":[0],"seed":1})" << "\n";
  }
  try {
    load(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("state keys regenerate from observations") {
  for (auto env : {envs::EnvId::takeball, envs::EnvId::extra, envs::EnvId::pathfollowing}) {
    const Dataset d = generate(env, 3, 5);
    for (const auto& t : d.trajectories)
      for (const auto& s : t.steps) {
        CHECK(s.key == s.obs.key());
        if (s.obs.kind() != Observation::Kind::real) {
          const auto back = Observation::from_key_string(s.obs.kind(), s.obs.key_string(), static_cast<std::uint32_t>(s.obs.dim()));
          CHECK(back == s.obs);
        }
      }
  }
}

TEST_CASE("shuffle_and_strip") {
  const Dataset d = generate(envs::EnvId::takeball, 5, 3);
  auto [same, same_labels] = shuffle_and_strip(d, kIdentityShuffle);
  CHECK_FALSE(same.labeled());
  CHECK(same.trajectories == d.trajectories);
  CHECK(same_labels == *d.labels);

  auto [mixed, hidden] = shuffle_and_strip(d, 99);
  CHECK(mixed.trajectories != d.trajectories);
  auto sorted_hidden = hidden;
  auto sorted_truth = *d.labels;
  std::sort(sorted_hidden.begin(), sorted_hidden.end());
  std::sort(sorted_truth.begin(), sorted_truth.end());
  CHECK(sorted_hidden == sorted_truth);
  // labels travel with their trajectories
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    const auto it = std::find(d.trajectories.begin(), d.trajectories.end(), mixed.trajectories[i]);
    REQUIRE(it != d.trajectories.end());
    CHECK((*d.labels)[static_cast<std::size_t>(it - d.trajectories.begin())] == hidden[i]);
  }
  CHECK(metrics::nmi(std::span<const int>(hidden), std::span<const int>(hidden)) == 1.0);
}

TEST_CASE("validate catches label/trajectory mismatch") {
  Dataset d = generate(envs::EnvId::takeball, 2, 1);
  d.labels->pop_back();
  CHECK_THROWS_AS(d.validate(), DataError);
}
