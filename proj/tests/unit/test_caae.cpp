#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "trajclust/caae.hpp"
#include "trajclust/metrics.hpp"

using namespace trajclust;
using namespace trajclust::caae;

namespace {

CaaeConfig small_config() {
  CaaeConfig c;
  c.latent_dim = 3;
  c.encoder_hidden = {6};
  c.attention_dim = 4;
  c.decoder_hidden = {5, 4};
  return c;
}

std::vector<const Trajectory*> pointers(const Dataset& d, std::size_t n) {
  std::vector<const Trajectory*> out;
  for (std::size_t i = 0; i < std::min(n, d.size()); ++i) out.push_back(&d.trajectories[i]);
  return out;
}

// Zero-initialised biases put relu inputs exactly on the kink whenever a
// whole row upstream is dead; jitter them so finite differences are smooth.
void jitter_biases(CaaeModel& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < model.names().size(); ++i)
    if (model.names()[i].find(".b") != std::string::npos)
      model.parameters()[i] = oracle::random_tensor(model.parameters()[i].shape(), rng, -0.3, 0.3);
}

void check_gradients(const CaaeModel& model, const std::vector<const Trajectory*>& batch) {
  const auto analytic = loss_gradients(model, batch);
  CaaeModel probe = model;
  auto f = [&](const std::vector<nn::Tensor>& p) {
    probe.parameters() = p;
    return loss(probe, batch).total;
  };
  const auto numeric = oracle::finite_difference(f, model.parameters());
  REQUIRE(analytic.size() == numeric.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    CAPTURE(model.names()[i]);
    CHECK(oracle::relative_error(analytic[i], numeric[i]) <= 1e-4);
  }
}

}  // namespace

TEST_CASE("parameter layout") {
  const Dataset d = generate(envs::EnvId::takeball, 2, 1);
  CaaeModel m(observation_space(d), action_space(d.meta.env), 4, small_config(), 0);
  CHECK(m.names().back() == "codebook");
  CHECK(m.codebook().rows() == 4);
  CHECK(m.codebook().cols() == 3);
  CHECK(m.names().size() == m.parameters().size());
  CHECK_THROWS(m.parameter("nope"));
}

TEST_CASE("loss components") {
  const Dataset d = generate(envs::EnvId::takeball, 3, 1);
  CaaeModel m(observation_space(d), action_space(d.meta.env), 4, small_config(), 1);
  const auto batch = pointers(d, 6);
  const auto l = loss(m, batch);
  CHECK(l.reconstruction > 0);
  CHECK(l.attraction >= 0);
  CHECK(l.separation <= 0);
  CHECK(l.total == doctest::Approx(l.reconstruction + l.attraction + l.separation));

  // reconstruction is the sum of per-step decoder log-probs
  double rec = 0;
  for (const auto* t : batch) {
    const auto z = encode(m, *t).z;
    for (const auto& s : t->steps) rec -= decode_logprob(m, z, s);
  }
  CHECK(l.reconstruction == doctest::Approx(rec).epsilon(1e-10));

  // attraction is alpha * sum of squared distances to the nearest centroid
  double att = 0;
  for (const auto* t : batch) {
    const auto z = encode(m, *t).z;
    const auto& mu = m.codebook();
    const std::size_t j = nearest_centroid(mu, z);
    for (std::size_t c = 0; c < z.size(); ++c) att += (mu.at(j, c) - z[c]) * (mu.at(j, c) - z[c]);
  }
  CHECK(l.attraction == doctest::Approx(att).epsilon(1e-10));

  CaaeConfig off = small_config();
  off.separation_weight = 0;
  CaaeModel m0(observation_space(d), action_space(d.meta.env), 4, off, 1);
  CHECK(loss(m0, batch).separation == 0.0);
}

TEST_CASE("gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Dataset d = generate(envs::EnvId::diagonal, 1, seed);
    CaaeConfig c = small_config();
    c.codebook_scale = 0.3;  // keep centroids inside the clamp so separation has a gradient
    CaaeModel m(observation_space(d), action_space(d.meta.env), 3, c, seed);
    jitter_biases(m, seed);
    check_gradients(m, pointers(d, 3));
  }
  const Dataset path = generate(envs::EnvId::pathfollowing, 1, 2);
  CaaeModel g(observation_space(path), action_space(path.meta.env), 2, small_config(), 4);
  jitter_biases(g, 4);
  std::vector<const Trajectory*> batch;
  Trajectory shortened = path.trajectories[0];
  shortened.steps.resize(std::min<std::size_t>(shortened.size(), 6));
  batch.push_back(&shortened);
  check_gradients(g, batch);
}

TEST_CASE("encoding") {
  const Dataset d = generate(envs::EnvId::takeball, 2, 1);
  CaaeModel m(observation_space(d), action_space(d.meta.env), 2, small_config(), 1);
  const auto all = encode_all(m, d);
  REQUIRE(all.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(all[i].index == i);
    const auto one = encode(m, d.trajectories[i]).z;
    for (std::size_t c = 0; c < one.size(); ++c) CHECK(all[i].z[c] == doctest::Approx(one[c]).epsilon(1e-12));
  }
  CHECK(step_embeddings(m, d.trajectories[0]).rows() == d.trajectories[0].size());
  CHECK_THROWS_AS(encode(m, Trajectory{}), DataError);
  std::vector<double> bad(7, 0.0);
  CHECK_THROWS_AS(decode_logprob(m, bad, d.trajectories[0].steps[0]), ShapeError);
  Step invalid = d.trajectories[0].steps[0];
  invalid.action = 9;
  CHECK_THROWS_AS(decode_logprob(m, all[0].z, invalid), DataError);
}

TEST_CASE("decoder distribution is normalised") {
  const Dataset d = generate(envs::EnvId::takeball, 1, 1);
  CaaeModel m(observation_space(d), action_space(d.meta.env), 2, small_config(), 3);
  const auto z = encode(m, d.trajectories[0]).z;
  Step s = d.trajectories[0].steps[0];
  double total = 0;
  for (int a = 0; a < 5; ++a) {
    s.action = a;
    total += std::exp(decode_logprob(m, z, s));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nearest centroid ties go low") {
  const auto mu = nn::Tensor::matrix({{1, 0}, {-1, 0}, {0, 5}});
  const std::vector<double> z{0, 0};
  CHECK(nearest_centroid(mu, z) == 0);
  const std::vector<double> w{-0.9, 0};
  CHECK(nearest_centroid(mu, w) == 1);
}

TEST_CASE("rescaling keeps reconstruction and shrinks attraction") {
  const Dataset d = generate(envs::EnvId::takeball, 2, 1);
  CaaeConfig c = small_config();
  c.separation_weight = 0;
  CaaeModel m(observation_space(d), action_space(d.meta.env), 3, c, 5);
  const auto batch = pointers(d, 8);
  const auto before = loss(m, batch);
  rescale_latent(m, 0.5);
  const auto after = loss(m, batch);
  CHECK(std::abs(after.reconstruction - before.reconstruction) <= 1e-8);
  CHECK(after.attraction == doctest::Approx(0.25 * before.attraction));
}

TEST_CASE("dead centroid reset") {
  const Dataset d = generate(envs::EnvId::takeball, 2, 1);
  CaaeModel m(observation_space(d), action_space(d.meta.env), 3, small_config(), 5);
  auto lat = encode_all(m, d);
  // park every centroid far away except the first
  for (std::size_t j = 1; j < 3; ++j)
    for (std::size_t c = 0; c < 3; ++c) m.codebook().at(j, c) = 1e3;
  const auto batch = pointers(d, d.size());
  const double before = loss(m, batch).attraction;
  CHECK(reset_dead_centroids(m, lat) == 2);
  CHECK(loss(m, batch).attraction < before);

  // centroids sitting on three distinct codes are all in use
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 3; ++c) m.codebook().at(j, c) = lat[j].z[c];
  CHECK(reset_dead_centroids(m, lat) == 0);
}

TEST_CASE("training is deterministic and lowers the loss") {
  const Dataset d = generate(envs::EnvId::takeball, 4, 2);
  CaaeConfig c = small_config();
  c.epochs = 4;
  c.batch_size = 8;
  const auto a = train(d, 4, c, 3);
  const auto b = train(d, 4, c, 3);
  CHECK(a.model.parameters() == b.model.parameters());
  REQUIRE(a.log.size() == 5);
  CHECK(a.log.back().loss.total < a.log.front().loss.total);
  CHECK(assign(a.model, d).size() == d.size());
}

TEST_CASE("model checkpoints round trip") {
  const auto path = std::filesystem::temp_directory_path() / "trajclust_caae.bin";
  const Dataset d = generate(envs::EnvId::pathfollowing, 1, 2);
  CaaeModel m(observation_space(d), action_space(d.meta.env), 3, small_config(), 5);
  save_model(m, path);
  const auto back = load_model(path);
  CHECK(back.names() == m.names());
  CHECK(back.parameters() == m.parameters());
  CHECK(back.config().latent_dim == 3);
  CHECK(back.actions() == m.actions());
  std::filesystem::remove(path);
}

TEST_CASE("pooling, decoder and loss term examples") {
  const Dataset d = generate(envs::EnvId::takeball, 2, 1);
  const auto obs = observation_space(d);
  const auto acts = action_space(d.meta.env);

  // length-1 trajectory: z is that step's embedding
  CaaeModel m(obs, acts, 3, small_config(), 2);
  Trajectory one;
  one.steps.push_back(d.trajectories[0].steps[0]);
  const auto z = encode(m, one).z;
  const auto y = step_embeddings(m, one);
  for (std::size_t c = 0; c < z.size(); ++c) CHECK(z[c] == doctest::Approx(y.at(0, c)).epsilon(1e-12));

  // zero decoder weights: uniform over the 5 moves
  CaaeModel zero = m;
  for (std::size_t i = 0; i < zero.names().size(); ++i)
    if (zero.names()[i].starts_with("dec.")) zero.parameters()[i] = nn::Tensor(zero.parameters()[i].shape(), 0.0);
  Step s = one.steps[0];
  for (int a = 0; a < 5; ++a) {
    s.action = a;
    CHECK(decode_logprob(zero, z, s) == doctest::Approx(std::log(0.2)).epsilon(1e-12));
  }

  const std::vector<const Trajectory*> batch{&one};
  // all centroids equal: no separation reward
  CaaeModel same = m;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 3; ++c) same.codebook().at(j, c) = 0.5;
  CHECK(loss(same, batch).separation == 0.0);
  // all centroids far apart: -(m^2 - m)/m^2
  CaaeModel far = m;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 3; ++c) far.codebook().at(j, c) = j == c ? 10.0 : 0.0;
  CHECK(loss(far, batch).separation == doctest::Approx(-6.0 / 9.0));
  // z exactly on a centroid: zero attraction
  for (std::size_t c = 0; c < 3; ++c) far.codebook().at(1, c) = z[c];
  CHECK(loss(far, batch).attraction == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("without attraction and separation the codebook gets no gradient") {
  const Dataset d = generate(envs::EnvId::diagonal, 1, 3);
  CaaeConfig c = small_config();
  c.alpha = 0;
  c.separation_weight = 0;
  CaaeModel m(observation_space(d), action_space(d.meta.env), 3, c, 1);
  const auto g = loss_gradients(m, pointers(d, 3));
  for (double v : g.back().data()) CHECK(v == 0.0);
}

TEST_CASE("assignment geometry") {
  const Dataset d = generate(envs::EnvId::takeball, 3, 1);
  CaaeModel m(observation_space(d), action_space(d.meta.env), 3, small_config(), 8);
  const auto base = assign(m, d);
  CHECK(assign(m, d) == base);

  // permuting centroids permutes labels
  const std::vector<std::size_t> perm{2, 0, 1};
  CaaeModel p = m;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 3; ++c) p.codebook().at(perm[j], c) = m.codebook().at(j, c);
  const auto permuted = assign(p, d);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(permuted[i] == perm[base[i]]);

  // a rotation applied to both z and mu keeps every nearest centroid
  const double th = 0.7;
  auto rotate = [&](std::vector<double> v) {
    const double a = v[0], b = v[1];
    v[0] = std::cos(th) * a - std::sin(th) * b;
    v[1] = std::sin(th) * a + std::cos(th) * b;
    return v;
  };
  nn::Tensor mu = m.codebook();
  for (std::size_t j = 0; j < 3; ++j) {
    const auto r = rotate({mu.at(j, 0), mu.at(j, 1), mu.at(j, 2)});
    for (std::size_t c = 0; c < 3; ++c) mu.at(j, c) = r[c];
  }
  for (const auto& e : encode_all(m, d)) CHECK(nearest_centroid(mu, rotate(e.z)) == base[e.index]);

  // one centroid: everything in cluster 0
  CaaeModel single(observation_space(d), action_space(d.meta.env), 1, small_config(), 8);
  const auto all_zero = assign(single, d);
  for (auto l : all_zero.labels()) CHECK(l == 0);
}
