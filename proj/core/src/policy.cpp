#include "trajclust/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>

#include "features.hpp"
#include "trajclust/autodiff.hpp"
#include "trajclust/optim.hpp"

namespace trajclust::policy {

namespace {

std::vector<const Step*> step_pointers(const Trajectory& traj) {
  std::vector<const Step*> out;
  out.reserve(traj.size());
  for (const auto& s : traj.steps) out.push_back(&s);
  return out;
}

void check_action(const ActionSpace& space, const Step& s) {
  if (space.continuous) {
    if (s.real_action.size() != space.size)
      throw DataError("action of dimension " + std::to_string(s.real_action.size()) + " for a " +
                      std::to_string(space.size) + "-dimensional policy");
  } else if (!s.real_action.empty() || s.action < 0 || static_cast<std::size_t>(s.action) >= space.size) {
    throw DataError("action " + std::to_string(s.action) + " outside the policy's " + std::to_string(space.size) +
                    " discrete actions");
  }
}

/// Network output for the family: logits (categorical) or means (Gaussian).
nn::Var network(nn::Tape& tape, Family family, std::span<const nn::Var> p, const detail::FeatureBatch& x) {
  switch (family) {
    case Family::linear_softmax:
    case Family::linear_gaussian: return tape.add_row(detail::input_layer(tape, p[0], x), p[1]);
    case Family::mlp_categorical: {
      nn::Var h = tape.relu(tape.add_row(detail::input_layer(tape, p[0], x), p[1]));
      std::size_t i = 2;
      for (; i + 2 < p.size(); i += 2) h = tape.relu(tape.add_row(tape.matmul(h, p[i]), p[i + 1]));
      return tape.add_row(tape.matmul(h, p[i]), p[i + 1]);
    }
    case Family::tabular: break;
  }
  throw Error("network: tabular policies have no network");
}

/// Per-step log-probabilities of the recorded actions, [n x 1].
nn::Var step_log_prob_var(nn::Tape& tape, Family family, std::span<const nn::Var> p, const detail::FeatureBatch& x,
                          std::span<const Step* const> steps, const ActionSpace& actions) {
  nn::Var out = network(tape, family, p, x);
  if (family == Family::linear_gaussian) {
    nn::Tensor target(nn::Shape{steps.size(), actions.size});
    for (std::size_t r = 0; r < steps.size(); ++r)
      for (std::size_t c = 0; c < actions.size; ++c) target.at(r, c) = steps[r]->real_action[c];
    return tape.gaussian_log_prob(out, p[2], target);
  }
  std::vector<std::size_t> chosen(steps.size());
  for (std::size_t r = 0; r < steps.size(); ++r) chosen[r] = static_cast<std::size_t>(steps[r]->action);
  return tape.pick(tape.log_softmax(out), chosen);
}

std::vector<nn::Tensor> init_params(Family family, const ObservationSpace& obs, const ActionSpace& actions,
                                    const FitConfig& config, Rng& rng) {
  const std::size_t in = detail::feature_dim(obs, actions, false);
  const double in_scale = detail::input_init_scale(obs, actions, false);
  std::vector<nn::Tensor> p;
  switch (family) {
    case Family::linear_softmax:
      p.push_back(detail::random_tensor(in, actions.size, in_scale, rng));
      p.emplace_back(nn::Shape{1, actions.size});
      break;
    case Family::linear_gaussian:
      p.push_back(detail::random_tensor(in, actions.size, in_scale, rng));
      p.emplace_back(nn::Shape{1, actions.size});
      p.emplace_back(nn::Shape{1, actions.size});  // log std = 0
      break;
    case Family::mlp_categorical: {
      if (config.hidden.empty()) throw Error("mlp-categorical needs at least one hidden layer");
      std::size_t width = in;
      for (std::size_t layer = 0; layer < config.hidden.size(); ++layer) {
        const double scale = layer == 0 ? in_scale : std::sqrt(2.0 / static_cast<double>(width));
        p.push_back(detail::random_tensor(width, config.hidden[layer], scale, rng));
        p.emplace_back(nn::Shape{1, config.hidden[layer]});
        width = config.hidden[layer];
      }
      p.push_back(detail::random_tensor(width, actions.size, 1.0 / std::sqrt(static_cast<double>(width)), rng));
      p.emplace_back(nn::Shape{1, actions.size});
      break;
    }
    case Family::tabular: throw Error("init_params: tabular policies have no parameters");
  }
  return p;
}

PolicyPtr fit_tabular(std::span<const Trajectory* const> trajs, const ActionSpace& actions, const FitConfig& config) {
  if (actions.continuous) throw DataError("tabular policies need discrete actions");
  auto policy = std::make_shared<TabularPolicy>(actions.size, config.smoothing, config.timestep_indexed);
  for (const Trajectory* t : trajs)
    for (std::size_t h = 0; h < t->size(); ++h) {
      const Step& s = t->steps[h];
      check_action(actions, s);
      policy->add(s.key, h, s.action);
    }
  return policy;
}

PolicyPtr fit_neural(Family family, std::span<const Trajectory* const> trajs, const ObservationSpace& obs,
                     const ActionSpace& actions, const FitConfig& config) {
  if ((family == Family::linear_gaussian) != actions.continuous)
    throw DataError(std::string(family_name(family)) + " does not match the dataset's action space");
  std::vector<const Step*> steps;
  for (const Trajectory* t : trajs)
    for (const auto& s : t->steps) {
      check_action(actions, s);
      steps.push_back(&s);
    }
  Rng rng = make_rng({config.seed, static_cast<std::uint64_t>(family), steps.size()});
  std::vector<nn::Tensor> params = init_params(family, obs, actions, config, rng);
  nn::Adam adam({.lr = config.learning_rate});
  std::vector<nn::Tensor*> param_ptrs;
  for (auto& t : params) param_ptrs.push_back(&t);

  std::vector<std::size_t> order(steps.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  std::vector<const Step*> chunk;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += batch) {
      const std::size_t hi = std::min(order.size(), lo + batch);
      chunk.clear();
      for (std::size_t i = lo; i < hi; ++i) chunk.push_back(steps[order[i]]);
      const auto x = detail::make_features(chunk, obs, actions, false);
      nn::Tape tape;
      std::vector<nn::Var> leaves;
      for (const auto& t : params) leaves.push_back(tape.leaf(t));
      nn::Var nll = tape.scale(tape.mean(step_log_prob_var(tape, family, leaves, x, chunk, actions)), -1.0);
      adam.step(param_ptrs, tape.backward(nll));
    }
  }
  return std::make_shared<NeuralPolicy>(family, obs, actions, std::move(params));
}

}  // namespace

std::string_view family_name(Family family) {
  switch (family) {
    case Family::tabular: return "tabular";
    case Family::linear_softmax: return "linear-softmax";
    case Family::mlp_categorical: return "mlp-categorical";
    case Family::linear_gaussian: return "linear-gaussian";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (Family f : {Family::tabular, Family::linear_softmax, Family::mlp_categorical, Family::linear_gaussian})
    if (family_name(f) == name) return f;
  throw DataError("unknown policy family '" + std::string(name) + "'");
}

bool is_categorical(Family family) { return family != Family::linear_gaussian; }

double Policy::log_likelihood(const Trajectory& traj) const {
  const auto lp = step_log_probs(traj);
  return std::accumulate(lp.begin(), lp.end(), 0.0);
}

// ---- TabularPolicy -------------------------------------------------------------

TabularPolicy::TabularPolicy(std::size_t n_actions, double smoothing, bool timestep_indexed)
    : actions_{false, n_actions}, smoothing_(smoothing), timestep_indexed_(timestep_indexed) {
  if (!(smoothing > 0.0)) throw Error("tabular smoothing must be positive");
  if (n_actions == 0) throw Error("tabular policy needs at least one action");
}

StateKey TabularPolicy::slot_key(StateKey key, std::size_t t) const {
  return timestep_indexed_ ? mix64(key ^ mix64(t + 1)) : key;
}

void TabularPolicy::add(StateKey key, std::size_t t, int action, double weight) {
  Row& row = table_[slot_key(key, t)];
  if (row.counts.empty()) row.counts.assign(actions_.size, 0.0);
  row.counts.at(static_cast<std::size_t>(action)) += weight;
  row.total += weight;
}

double TabularPolicy::log_prob(StateKey key, std::size_t t, int action) const {
  const auto it = table_.find(slot_key(key, t));
  const double n = static_cast<double>(actions_.size);
  if (it == table_.end()) return -std::log(n);
  const Row& row = it->second;
  const auto a = static_cast<std::size_t>(action);
  if (!row.log_probs.empty()) return row.log_probs[a];
  return std::log((row.counts[a] + smoothing_) / (row.total + n * smoothing_));
}

std::vector<double> TabularPolicy::probabilities(StateKey key, std::size_t t) const {
  std::vector<double> p(actions_.size);
  for (std::size_t a = 0; a < p.size(); ++a) p[a] = std::exp(log_prob(key, t, static_cast<int>(a)));
  return p;
}

void TabularPolicy::set_probabilities(StateKey key, std::size_t t, std::span<const double> probs) {
  if (probs.size() != actions_.size) throw DataError("set_probabilities: wrong number of actions");
  Row& row = table_[slot_key(key, t)];
  if (row.counts.empty()) row.counts.assign(actions_.size, 0.0);
  row.log_probs.resize(probs.size());
  for (std::size_t a = 0; a < probs.size(); ++a) row.log_probs[a] = std::log(probs[a]);
}

std::vector<double> TabularPolicy::step_log_probs(const Trajectory& traj) const {
  std::vector<double> out(traj.size());
  for (std::size_t h = 0; h < traj.size(); ++h) {
    check_action(actions_, traj.steps[h]);
    out[h] = log_prob(traj.steps[h].key, h, traj.steps[h].action);
  }
  return out;
}

double TabularPolicy::log_likelihood(const Trajectory& traj) const {
  double total = 0.0;
  for (std::size_t h = 0; h < traj.size(); ++h) {
    const Step& s = traj.steps[h];
    if (s.action < 0 || static_cast<std::size_t>(s.action) >= actions_.size || !s.real_action.empty())
      check_action(actions_, s);
    total += log_prob(s.key, h, s.action);
  }
  return total;
}

double TabularPolicy::log_prior() const {
  // eps * sum_s sum_a log(|A| P(a|s)): the Dirichlet(1 + eps) log-density up
  // to a constant; unseen states are uniform and contribute 0.
  const double n = static_cast<double>(actions_.size);
  double total = 0.0;
  for (const auto& [key, row] : table_)
    for (std::size_t a = 0; a < actions_.size; ++a) {
      const double lp =
          row.log_probs.empty() ? std::log((row.counts[a] + smoothing_) / (row.total + n * smoothing_)) : row.log_probs[a];
      total += lp + std::log(n);
    }
  return smoothing_ * total;
}

Action TabularPolicy::sample(const Step& context, std::size_t t, Rng& rng) const {
  const auto p = probabilities(context.key, t);
  std::discrete_distribution<int> pick(p.begin(), p.end());
  return {pick(rng), {}};
}

std::vector<nn::NamedTensor> TabularPolicy::to_tensors() const {
  std::vector<nn::NamedTensor> out;
  out.push_back({"tabular.meta", nn::Tensor::vector({smoothing_, static_cast<double>(actions_.size),
                                                     timestep_indexed_ ? 1.0 : 0.0})});
  std::vector<std::pair<StateKey, const Row*>> rows;
  for (const auto& [k, r] : table_) rows.emplace_back(k, &r);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  char buf[32];
  for (const auto& [k, r] : rows) {
    std::snprintf(buf, sizeof buf, "s:%016llx", static_cast<unsigned long long>(k));
    out.push_back({buf, nn::Tensor(nn::Shape{actions_.size}, r->counts)});
  }
  return out;
}

// ---- UniformPolicy ---------------------------------------------------------------

std::vector<double> UniformPolicy::step_log_probs(const Trajectory& traj) const {
  std::vector<double> out(traj.size());
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (std::size_t h = 0; h < traj.size(); ++h) {
    const Step& s = traj.steps[h];
    check_action(actions_, s);
    if (actions_.continuous) {
      double acc = 0.0;
      for (double a : s.real_action) acc += -0.5 * a * a - half_log_2pi;
      out[h] = acc;
    } else {
      out[h] = -std::log(static_cast<double>(actions_.size));
    }
  }
  return out;
}

Action UniformPolicy::sample(const Step&, std::size_t, Rng& rng) const {
  if (actions_.continuous) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Action a;
    for (std::size_t i = 0; i < actions_.size; ++i) a.real.push_back(normal(rng));
    return a;
  }
  std::uniform_int_distribution<int> any(0, static_cast<int>(actions_.size) - 1);
  return {any(rng), {}};
}

std::vector<nn::NamedTensor> UniformPolicy::to_tensors() const {
  return {{"uniform.meta", nn::Tensor::vector({static_cast<double>(family_), static_cast<double>(actions_.size),
                                               actions_.continuous ? 1.0 : 0.0})}};
}

// ---- NeuralPolicy ----------------------------------------------------------------

NeuralPolicy::NeuralPolicy(Family family, ObservationSpace obs, ActionSpace actions, std::vector<nn::Tensor> params)
    : family_(family), obs_(obs), actions_(actions), params_(std::move(params)) {
  if (family == Family::tabular) throw Error("NeuralPolicy cannot be tabular");
}

nn::Tensor NeuralPolicy::forward(std::span<const Step* const> steps) const {
  nn::Tape tape(false);
  std::vector<nn::Var> p;
  for (const auto& t : params_) p.push_back(tape.constant(t));
  const auto x = detail::make_features(steps, obs_, actions_, false);
  nn::Var out = network(tape, family_, p, x);
  if (is_categorical(family_)) out = tape.softmax(out);
  return out.value();
}

std::vector<double> NeuralPolicy::step_log_probs(const Trajectory& traj) const {
  if (traj.steps.empty()) return {};
  for (const auto& s : traj.steps) check_action(actions_, s);
  const auto steps = step_pointers(traj);
  nn::Tape tape(false);
  std::vector<nn::Var> p;
  for (const auto& t : params_) p.push_back(tape.constant(t));
  const auto x = detail::make_features(steps, obs_, actions_, false);
  const nn::Tensor& lp = step_log_prob_var(tape, family_, p, x, steps, actions_).value();
  return {lp.data().begin(), lp.data().end()};
}

Action NeuralPolicy::sample(const Step& context, std::size_t, Rng& rng) const {
  const Step* one[] = {&context};
  const nn::Tensor out = forward(one);
  if (family_ == Family::linear_gaussian) {
    Action a;
    std::normal_distribution<double> normal(0.0, 1.0);
    const nn::Tensor& log_std = params_[2];
    for (std::size_t c = 0; c < actions_.size; ++c) a.real.push_back(out[c] + std::exp(log_std[c]) * normal(rng));
    return a;
  }
  std::discrete_distribution<int> pick(out.data().begin(), out.data().end());
  return {pick(rng), {}};
}

std::vector<nn::NamedTensor> NeuralPolicy::to_tensors() const {
  std::vector<nn::NamedTensor> out;
  out.push_back({"neural.meta", nn::Tensor::vector({static_cast<double>(family_), static_cast<double>(actions_.size),
                                                    actions_.continuous ? 1.0 : 0.0})});
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({"param." + std::to_string(i), params_[i]});
  return out;
}

// ---- free functions ----------------------------------------------------------------

PolicyPtr make_uniform(Family family, const ActionSpace& actions) {
  return std::make_shared<UniformPolicy>(family, actions);
}

PolicyPtr fit(Family family, std::span<const Trajectory* const> trajectories, const ObservationSpace& obs,
              const ActionSpace& actions, const FitConfig& config) {
  if (trajectories.empty()) return make_uniform(family, actions);
  if (family == Family::tabular) return fit_tabular(trajectories, actions, config);
  return fit_neural(family, trajectories, obs, actions, config);
}

PolicyPtr fit(Family family, const Dataset& data, const FitConfig& config) {
  std::vector<const Trajectory*> all;
  for (const auto& t : data.trajectories) all.push_back(&t);
  return fit(family, all, observation_space(data), action_space(data.meta.env), config);
}

double mean_nll(const Policy& policy, std::span<const Trajectory* const> trajectories) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const Trajectory* t : trajectories) {
    total -= policy.log_likelihood(*t);
    steps += t->size();
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

Action sample_action(const Policy& policy, const Step& context, std::size_t t, Rng& rng) {
  return policy.sample(context, t, rng);
}

void save_policy(const Policy& policy, const std::filesystem::path& path) {
  nn::save_checkpoint(path, policy.to_tensors());
}

PolicyPtr load_policy(const std::filesystem::path& path, const ObservationSpace& obs) {
  const auto records = nn::load_checkpoint(path);
  if (records.empty()) throw DataError(path.string() + ": empty policy checkpoint");
  const auto& meta = records.front();
  if (meta.value.size() != 3) throw DataError(path.string() + ": malformed policy header");
  if (meta.name == "tabular.meta") {
    if (meta.value[2] != 0.0) throw DataError("timestep-indexed tabular checkpoints are not supported");
    auto policy = std::make_shared<TabularPolicy>(static_cast<std::size_t>(meta.value[1]), meta.value[0],
                                                  meta.value[2] != 0.0);
    for (std::size_t i = 1; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.name.size() != 18 || r.name.compare(0, 2, "s:") != 0) throw DataError("bad tabular record " + r.name);
      const StateKey key = std::stoull(r.name.substr(2), nullptr, 16);
      // Keys are stored already slotted; add() with t = 0 would re-slot them.
      for (std::size_t a = 0; a < r.value.size(); ++a)
        if (r.value[a] != 0.0) policy->add(key, 0, static_cast<int>(a), r.value[a]);
    }
    return policy;
  }
  const auto family = static_cast<Family>(static_cast<int>(meta.value[0]));
  const ActionSpace actions{meta.value[2] != 0.0, static_cast<std::size_t>(meta.value[1])};
  if (meta.name == "uniform.meta") return make_uniform(family, actions);
  if (meta.name != "neural.meta") throw DataError(path.string() + ": unknown policy kind " + meta.name);
  std::vector<nn::Tensor> params;
  for (std::size_t i = 1; i < records.size(); ++i) params.push_back(records[i].value);
  return std::make_shared<NeuralPolicy>(family, obs, actions, std::move(params));
}

}  // namespace trajclust::policy
