#include "trajclust/caae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "features.hpp"
#include "trajclust/optim.hpp"

namespace trajclust::caae {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

/// Parameter positions; the order is fixed by the config.
struct Layout {
  std::size_t enc_layers, attn_w, attn_v, out_w, out_b;
  std::size_t dec_z, dec_obs, dec_b0, dec_rest, head_w, head_b, log_std, codebook;
  std::size_t dec_layers;
  bool gaussian;

  Layout(const CaaeConfig& c, const ActionSpace& a) {
    enc_layers = c.encoder_hidden.size();
    attn_w = 2 * enc_layers;
    attn_v = attn_w + 1;
    out_w = attn_w + 2;
    out_b = attn_w + 3;
    dec_layers = c.decoder_hidden.size();
    dec_z = attn_w + 4;
    dec_obs = dec_z + 1;
    dec_b0 = dec_z + 2;
    dec_rest = dec_z + 3;
    head_w = dec_rest + 2 * (dec_layers - 1);
    head_b = head_w + 1;
    gaussian = a.continuous;
    log_std = head_b + 1;
    codebook = gaussian ? log_std + 1 : log_std;
  }
};

void check_config(const CaaeConfig& c) {
  if (c.latent_dim == 0) throw DataError("latent_dim must be positive");
  if (c.encoder_hidden.empty() || c.decoder_hidden.empty()) throw DataError("encoder and decoder need hidden layers");
  if (c.alpha < 0) throw DataError("alpha must be >= 0");
  if (c.separation_weight < 0) throw DataError("separation weight must be >= 0");
}

std::vector<const Step*> collect_steps(std::span<const Trajectory* const> batch, std::vector<std::size_t>& offsets,
                                       std::vector<std::size_t>& owner) {
  std::vector<const Step*> steps;
  offsets.assign(1, 0);
  owner.clear();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b]->steps.empty()) throw DataError("cannot encode an empty trajectory");
    for (const auto& s : batch[b]->steps) {
      steps.push_back(&s);
      owner.push_back(b);
    }
    offsets.push_back(steps.size());
  }
  return steps;
}

void check_step_action(const ActionSpace& actions, const Step& s) {
  if (actions.continuous) {
    if (s.real_action.size() != actions.size)
      throw DataError("continuous action of size " + std::to_string(s.real_action.size()) + ", expected " +
                      std::to_string(actions.size));
  } else if (s.action < 0 || static_cast<std::size_t>(s.action) >= actions.size) {
    throw DataError("action " + std::to_string(s.action) + " outside [0, " + std::to_string(actions.size) + ")");
  }
}

struct Encoded {
  Var z;  // [B x d]
  Var y;  // per-step embeddings [S x d]
};

Encoded encoder(Tape& tape, const Layout& L, std::span<const Var> p, const detail::FeatureBatch& x,
                std::span<const std::size_t> offsets) {
  Var h = tape.relu(tape.add_row(detail::input_layer(tape, p[0], x), p[1]));
  for (std::size_t l = 1; l < L.enc_layers; ++l) h = tape.relu(tape.add_row(tape.matmul(h, p[2 * l]), p[2 * l + 1]));
  Var scores = tape.matmul(tape.tanh(tape.matmul(h, p[L.attn_w])), p[L.attn_v]);
  Var weights = tape.segment_softmax(scores, offsets);
  Var y = tape.add_row(tape.matmul(h, p[L.out_w]), p[L.out_b]);
  return {tape.segment_weighted_sum(weights, y, offsets), y};
}

/// Decoder output per step: logits (categorical) or means (Gaussian).
Var decoder(Tape& tape, const Layout& L, std::span<const Var> p, Var z, std::span<const std::size_t> owner,
            const detail::FeatureBatch& obs) {
  Var from_z = tape.gather_rows(tape.matmul(z, p[L.dec_z]), owner);
  Var h = tape.relu(tape.add_row(tape.add(from_z, detail::input_layer(tape, p[L.dec_obs], obs)), p[L.dec_b0]));
  for (std::size_t l = 1; l < L.dec_layers; ++l) {
    const std::size_t w = L.dec_rest + 2 * (l - 1);
    h = tape.relu(tape.add_row(tape.matmul(h, p[w]), p[w + 1]));
  }
  return tape.add_row(tape.matmul(h, p[L.head_w]), p[L.head_b]);
}

/// log P(a_s | z, s) for every step, [S x 1].
Var step_log_probs(Tape& tape, const Layout& L, std::span<const Var> p, Var out, std::span<const Step* const> steps,
                   const ActionSpace& actions) {
  if (L.gaussian) {
    Tensor target(Shape{steps.size(), actions.size});
    for (std::size_t r = 0; r < steps.size(); ++r)
      for (std::size_t c = 0; c < actions.size; ++c) target.at(r, c) = steps[r]->real_action[c];
    return tape.gaussian_log_prob(out, p[L.log_std], target);
  }
  std::vector<std::size_t> picked;
  picked.reserve(steps.size());
  for (const Step* s : steps) picked.push_back(static_cast<std::size_t>(s->action));
  return tape.pick(tape.log_softmax(out), picked);
}

std::vector<Var> constants(Tape& tape, const std::vector<Tensor>& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& t : params) out.push_back(tape.constant(t));
  return out;
}

LossComponents read(const LossGraph& g) {
  return {g.reconstruction.value().item(), g.attraction.value().item(), g.separation.value().item(),
          g.total.value().item()};
}

std::vector<double> meta_vector(const CaaeModel& m) {
  const auto& c = m.config();
  std::vector<double> v{static_cast<double>(m.k()),
                        static_cast<double>(c.latent_dim),
                        static_cast<double>(c.attention_dim),
                        c.alpha,
                        c.separation_weight,
                        static_cast<double>(m.observations().kind),
                        static_cast<double>(m.observations().dim),
                        m.actions().continuous ? 1.0 : 0.0,
                        static_cast<double>(m.actions().size),
                        static_cast<double>(c.encoder_hidden.size())};
  for (auto h : c.encoder_hidden) v.push_back(static_cast<double>(h));
  v.push_back(static_cast<double>(c.decoder_hidden.size()));
  for (auto h : c.decoder_hidden) v.push_back(static_cast<double>(h));
  return v;
}

}  // namespace

CaaeModel::CaaeModel(const ObservationSpace& obs, const ActionSpace& actions, std::size_t k, const CaaeConfig& config,
                     std::uint64_t seed)
    : obs_(obs), actions_(actions), k_(k), config_(config) {
  check_config(config);
  if (k == 0) throw DataError("k must be at least 1");
  Rng rng = make_rng({seed, 0xcaaeULL});
  auto dense = [&](std::size_t rows, std::size_t cols, double gain = 1.0) {
    return detail::random_tensor(rows, cols, gain / std::sqrt(static_cast<double>(rows)), rng);
  };
  auto zeros = [](std::size_t cols) { return Tensor(Shape{1, cols}, 0.0); };

  const auto& eh = config.encoder_hidden;
  const std::size_t din = detail::feature_dim(obs, actions, true);
  add("enc.w0", detail::random_tensor(din, eh[0], detail::input_init_scale(obs, actions, true), rng));
  add("enc.b0", zeros(eh[0]));
  for (std::size_t l = 1; l < eh.size(); ++l) {
    add("enc.w" + std::to_string(l), dense(eh[l - 1], eh[l], std::sqrt(2.0)));
    add("enc.b" + std::to_string(l), zeros(eh[l]));
  }
  add("enc.attn_w", dense(eh.back(), config.attention_dim));
  add("enc.attn_v", dense(config.attention_dim, 1));
  add("enc.out_w", dense(eh.back(), config.latent_dim, config.latent_init_gain));
  add("enc.out_b", zeros(config.latent_dim));

  const auto& dh = config.decoder_hidden;
  add("dec.z_w", dense(config.latent_dim, dh[0]));
  add("dec.obs_w", detail::random_tensor(obs.dim, dh[0], detail::input_init_scale(obs, actions, false), rng));
  add("dec.b0", zeros(dh[0]));
  for (std::size_t l = 1; l < dh.size(); ++l) {
    add("dec.w" + std::to_string(l), dense(dh[l - 1], dh[l], std::sqrt(2.0)));
    add("dec.b" + std::to_string(l), zeros(dh[l]));
  }
  add("dec.head_w", dense(dh.back(), actions.size));
  add("dec.head_b", zeros(actions.size));
  if (actions.continuous) add("dec.log_std", zeros(actions.size));
  add("codebook", detail::random_tensor(k, config.latent_dim, config.codebook_scale, rng));
}

void CaaeModel::add(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  params_.push_back(std::move(value));
}

Tensor& CaaeModel::parameter(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).parameter(name));
}

const Tensor& CaaeModel::parameter(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw Error("CAAE model has no parameter " + name);
  return params_[static_cast<std::size_t>(it - names_.begin())];
}

std::vector<nn::NamedTensor> CaaeModel::to_tensors() const {
  std::vector<nn::NamedTensor> out;
  const auto meta = meta_vector(*this);
  out.push_back({"caae.meta", Tensor(Shape{meta.size()}, meta)});
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({names_[i], params_[i]});
  return out;
}

CaaeModel CaaeModel::from_tensors(const std::vector<nn::NamedTensor>& records) {
  if (records.empty() || records[0].name != "caae.meta") throw DataError("not a CAAE checkpoint");
  const auto meta = records[0].value.data();
  auto at = [&](std::size_t i) {
    if (i >= meta.size()) throw DataError("truncated CAAE header");
    return meta[i];
  };
  auto count = [&](std::size_t i) { return static_cast<std::size_t>(at(i)); };
  CaaeModel m;
  m.k_ = count(0);
  m.config_.latent_dim = count(1);
  m.config_.attention_dim = count(2);
  m.config_.alpha = at(3);
  m.config_.separation_weight = at(4);
  m.obs_.kind = static_cast<Observation::Kind>(count(5));
  m.obs_.dim = count(6);
  m.actions_.continuous = at(7) != 0.0;
  m.actions_.size = count(8);
  std::size_t pos = 9;
  m.config_.encoder_hidden.resize(count(pos++));
  for (auto& h : m.config_.encoder_hidden) h = count(pos++);
  m.config_.decoder_hidden.resize(count(pos++));
  for (auto& h : m.config_.decoder_hidden) h = count(pos++);
  check_config(m.config_);
  // Shapes are checked by comparing against a freshly initialised model.
  const CaaeModel shape_ref(m.obs_, m.actions_, m.k_, m.config_, 0);
  if (records.size() != shape_ref.params_.size() + 1) throw DataError("CAAE checkpoint has the wrong record count");
  for (std::size_t i = 0; i < shape_ref.params_.size(); ++i) {
    const auto& r = records[i + 1];
    if (r.name != shape_ref.names_[i] || r.value.shape() != shape_ref.params_[i].shape())
      throw DataError("CAAE checkpoint record " + std::to_string(i + 1) + " (" + r.name + ") does not match");
    m.add(r.name, r.value);
  }
  return m;
}

LossGraph build_loss(Tape& tape, const CaaeModel& model, std::span<const Var> p,
                     std::span<const Trajectory* const> batch, double separation_scale) {
  if (batch.empty()) throw DataError("CAAE loss needs a nonempty batch");
  const Layout L(model.config(), model.actions());
  if (p.size() != model.parameters().size()) throw ShapeError("CAAE loss: wrong parameter count");
  std::vector<std::size_t> offsets, owner;
  const auto steps = collect_steps(batch, offsets, owner);
  for (const Step* s : steps) check_step_action(model.actions(), *s);

  const auto enc_in = detail::make_features(steps, model.observations(), model.actions(), true);
  const auto dec_in = detail::make_features(steps, model.observations(), model.actions(), false);
  const Encoded enc = encoder(tape, L, p, enc_in, offsets);
  const Var out = decoder(tape, L, p, enc.z, owner, dec_in);

  LossGraph g;
  g.z = enc.z;
  g.reconstruction = tape.scale(tape.sum(step_log_probs(tape, L, p, out, steps, model.actions())), -1.0);
  const Var codebook = p[L.codebook];
  g.attraction = tape.scale(tape.sum(tape.row_min(tape.sq_dist(enc.z, codebook))), model.config().alpha);
  const double m = static_cast<double>(model.k());
  const double w = model.config().separation_weight * separation_scale / (m * m);
  g.separation = tape.scale(tape.sum(tape.clamp_max(tape.sq_dist(codebook, codebook), 1.0)), -w);
  g.total = tape.add(tape.add(g.reconstruction, g.attraction), g.separation);
  return g;
}

LossComponents loss(const CaaeModel& model, std::span<const Trajectory* const> batch, double separation_scale) {
  Tape tape(false);
  const auto p = constants(tape, model.parameters());
  return read(build_loss(tape, model, p, batch, separation_scale));
}

std::vector<Tensor> loss_gradients(const CaaeModel& model, std::span<const Trajectory* const> batch,
                                   double separation_scale) {
  Tape tape;
  std::vector<Var> p;
  for (const auto& t : model.parameters()) p.push_back(tape.leaf(t));
  return tape.backward(build_loss(tape, model, p, batch, separation_scale).total);
}

std::vector<LatentEmbedding> encode_all(const CaaeModel& model, const Dataset& data) {
  const Layout L(model.config(), model.actions());
  std::vector<LatentEmbedding> out(data.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < data.size(); lo += kChunk) {
    const std::size_t hi = std::min(data.size(), lo + kChunk);
    std::vector<const Trajectory*> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&data.trajectories[i]);
    std::vector<std::size_t> offsets, owner;
    const auto steps = collect_steps(batch, offsets, owner);
    Tape tape(false);
    const auto p = constants(tape, model.parameters());
    const auto x = detail::make_features(steps, model.observations(), model.actions(), true);
    const Tensor& z = encoder(tape, L, p, x, offsets).z.value();
    for (std::size_t i = lo; i < hi; ++i) {
      out[i].index = i;
      const auto row = z.data().subspan((i - lo) * z.cols(), z.cols());
      out[i].z.assign(row.begin(), row.end());
    }
  }
  return out;
}

LatentEmbedding encode(const CaaeModel& model, const Trajectory& traj, std::size_t index) {
  Dataset one;
  one.trajectories.push_back(traj);
  auto z = encode_all(model, one);
  z[0].index = index;
  return z[0];
}

Tensor step_embeddings(const CaaeModel& model, const Trajectory& traj) {
  const Layout L(model.config(), model.actions());
  const Trajectory* batch[] = {&traj};
  std::vector<std::size_t> offsets, owner;
  const auto steps = collect_steps(batch, offsets, owner);
  Tape tape(false);
  const auto p = constants(tape, model.parameters());
  const auto x = detail::make_features(steps, model.observations(), model.actions(), true);
  return encoder(tape, L, p, x, offsets).y.value();
}

double decode_logprob(const CaaeModel& model, std::span<const double> z, const Step& step) {
  if (z.size() != model.config().latent_dim)
    throw ShapeError("latent of size " + std::to_string(z.size()) + ", expected " +
                     std::to_string(model.config().latent_dim));
  check_step_action(model.actions(), step);
  const Layout L(model.config(), model.actions());
  Tape tape(false);
  const auto p = constants(tape, model.parameters());
  const Step* steps[] = {&step};
  const std::size_t owner[] = {0};
  const auto x = detail::make_features(steps, model.observations(), model.actions(), false);
  const Var zv = tape.constant(Tensor(Shape{1, z.size()}, std::vector<double>(z.begin(), z.end())));
  const Var out = decoder(tape, L, p, zv, owner, x);
  return step_log_probs(tape, L, p, out, steps, model.actions()).value().item();
}

TrainResult train(const Dataset& data, std::size_t k, const CaaeConfig& config, std::uint64_t seed) {
  if (data.size() == 0) throw DataError("cannot train on an empty dataset");
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{CaaeModel(observation_space(data), action_space(data.meta.env), k, config, seed), {}, 0.0};
  CaaeModel& model = result.model;

  std::vector<const Trajectory*> all;
  for (const auto& t : data.trajectories) all.push_back(&t);
  result.log.push_back({0, loss(model, all)});

  nn::Adam adam({.lr = config.learning_rate});
  std::vector<Tensor*> param_ptrs;
  for (auto& t : model.parameters()) param_ptrs.push_back(&t);

  Rng rng = make_rng({seed, 0x7261696eULL});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::max<std::size_t>(1, config.batch_size);
  const double n = static_cast<double>(data.size());
  std::vector<const Trajectory*> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossComponents sum;
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(all[order[i]]);
      Tape tape;
      std::vector<Var> p;
      for (const auto& t : model.parameters()) p.push_back(tape.leaf(t));
      const LossGraph g = build_loss(tape, model, p, batch, static_cast<double>(batch.size()) / n);
      const LossComponents c = read(g);
      sum.reconstruction += c.reconstruction;
      sum.attraction += c.attraction;
      sum.separation += c.separation;
      sum.total += c.total;
      adam.step(param_ptrs, tape.backward(g.total));
    }
    std::size_t moved = 0;
    if (config.reset_dead_centroids && epoch < config.epochs) moved = reset_dead_centroids(model, encode_all(model, data), config.dead_centroid_fraction);
    result.log.push_back({epoch, sum, moved});
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::size_t nearest_centroid(const Tensor& codebook, std::span<const double> z) {
  if (codebook.cols() != z.size()) throw ShapeError("latent and codebook dimensions differ");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < codebook.rows(); ++j) {
    double d = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) d += (codebook.at(j, c) - z[c]) * (codebook.at(j, c) - z[c]);
    if (d < best_d) {
      best = j;
      best_d = d;
    }
  }
  return best;
}

pgk::ClusterAssignment assign(const CaaeModel& model, const Dataset& data) {
  std::vector<std::size_t> labels;
  labels.reserve(data.size());
  for (const auto& e : encode_all(model, data)) labels.push_back(nearest_centroid(model.codebook(), e.z));
  return {std::move(labels), model.k()};
}

std::size_t reset_dead_centroids(CaaeModel& model, std::span<const LatentEmbedding> latents, double dead_fraction) {
  Tensor& mu = model.codebook();
  const std::size_t m = mu.rows(), d = mu.cols();
  std::vector<std::size_t> count(m, 0);
  for (const auto& e : latents) ++count[nearest_centroid(mu, e.z)];
  const double floor = dead_fraction * static_cast<double>(latents.size()) / static_cast<double>(m);
  std::vector<bool> used(m);
  for (std::size_t j = 0; j < m; ++j) used[j] = count[j] > 0 && static_cast<double>(count[j]) >= floor;
  std::vector<double> gap(latents.size(), std::numeric_limits<double>::infinity());
  auto refresh = [&](std::size_t j) {
    for (std::size_t i = 0; i < latents.size(); ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += (mu.at(j, c) - latents[i].z[c]) * (mu.at(j, c) - latents[i].z[c]);
      gap[i] = std::min(gap[i], s);
    }
  };
  for (std::size_t j = 0; j < m; ++j)
    if (used[j]) refresh(j);
  // Greedy k-means step: the candidate code whose adoption as a centroid
  // lowers the total attraction the most.
  auto sq = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += (latents[a].z[c] - latents[b].z[c]) * (latents[a].z[c] - latents[b].z[c]);
    return s;
  };
  std::size_t moved = 0;
  for (std::size_t j = 0; j < m && !latents.empty(); ++j) {
    if (used[j]) continue;
    std::size_t best = 0;
    double best_gain = -1.0;
    for (std::size_t cand = 0; cand < latents.size(); ++cand) {
      if (gap[cand] == 0.0) continue;
      double gain = 0.0;
      for (std::size_t i = 0; i < latents.size(); ++i) gain += std::max(0.0, gap[i] - sq(i, cand));
      if (gain > best_gain) {
        best = cand;
        best_gain = gain;
      }
    }
    if (best_gain < 0.0) break;
    for (std::size_t c = 0; c < d; ++c) mu.at(j, c) = latents[best].z[c];
    refresh(j);
    ++moved;
  }
  return moved;
}

void rescale_latent(CaaeModel& model, double lambda) {
  if (!(lambda > 0)) throw DataError("rescale factor must be positive");
  auto scale = [](Tensor& t, double f) {
    for (auto& x : t.data()) x *= f;
  };
  scale(model.parameter("enc.out_w"), lambda);
  scale(model.parameter("enc.out_b"), lambda);
  scale(model.parameter("dec.z_w"), 1.0 / lambda);
  scale(model.codebook(), lambda);
}

void save_model(const CaaeModel& model, const std::filesystem::path& path) {
  nn::save_checkpoint(path, model.to_tensors());
}

CaaeModel load_model(const std::filesystem::path& path) { return CaaeModel::from_tensors(nn::load_checkpoint(path)); }

}  // namespace trajclust::caae
