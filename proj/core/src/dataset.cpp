#include "trajclust/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

namespace trajclust {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr char kHex[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

long parse_long(std::string_view s) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad integer '" + std::string(s) + "'");
  return v;
}

Trajectory rollout_grid(envs::EnvId env, int expert, Rng& rng) {
  Trajectory traj;
  envs::GridState state = envs::reset(env, rng);
  const auto dim = static_cast<std::uint32_t>(envs::observation_size(env));
  const envs::ExpertSpec spec{env, expert};
  while (!state.done) {
    const auto active16 = envs::observe(state);
    std::vector<std::uint32_t> active(active16.begin(), active16.end());
    const envs::Move move = envs::expert_action(spec, state);
    auto next = envs::step(state, move, rng);
    traj.steps.push_back(make_step(Observation::planes(std::move(active), dim), static_cast<int>(move), next.reward));
    state = std::move(next.state);
  }
  return traj;
}

Trajectory rollout_path(int expert, Rng& rng) {
  Trajectory traj;
  envs::Vec2 pos = envs::pathfollowing_reset(rng);
  for (int t = 0; t < envs::kHorizon; ++t) {
    const envs::Vec2 action = envs::pathfollowing_expert(expert, pos);
    traj.steps.push_back(make_real_step(Observation::real({pos.x, pos.y}), {action.x, action.y}, 0.0));
    pos = envs::pathfollowing_step(pos, action, rng);
    if (envs::pathfollowing_at_goal(pos)) break;
  }
  return traj;
}

json step_to_json(const Step& s) {
  json arr = json::array();
  arr.push_back(s.obs.key_string());
  if (s.real_action.empty())
    arr.push_back(s.action);
  else
    arr.push_back(s.real_action);
  arr.push_back(s.reward);
  if (s.obs.kind() == Observation::Kind::real) arr.push_back(std::vector<double>(s.obs.values().begin(), s.obs.values().end()));
  return arr;
}

Step step_from_json(const json& j, Observation::Kind kind, std::uint32_t dim) {
  if (!j.is_array() || j.size() < 3) throw DataError("step must be an array [key, action, reward, ...]");
  const auto key = j.at(0).get<std::string>();
  Observation obs;
  if (kind == Observation::Kind::real) {
    if (j.size() != 4) throw DataError("continuous step needs an observation as its 4th element");
    obs = Observation::real(j.at(3).get<std::vector<double>>());
    if (obs.key_string() != key) throw DataError("state key '" + key + "' does not match its observation");
  } else {
    obs = Observation::from_key_string(kind, key, dim);
  }
  const double reward = j.at(2).get<double>();
  if (j.at(1).is_array()) return make_real_step(std::move(obs), j.at(1).get<std::vector<double>>(), reward);
  return make_step(std::move(obs), j.at(1).get<int>(), reward);
}

}  // namespace

// ---- Observation -------------------------------------------------------------

Observation Observation::planes(std::vector<std::uint32_t> active, std::uint32_t dim) {
  std::sort(active.begin(), active.end());
  active.erase(std::unique(active.begin(), active.end()), active.end());
  if (!active.empty() && active.back() >= dim)
    throw DataError("plane index " + std::to_string(active.back()) + " outside observation of size " + std::to_string(dim));
  Observation o;
  o.kind_ = Kind::planes;
  o.dim_ = dim;
  o.active_ = std::move(active);
  return o;
}

Observation Observation::symbol(std::uint32_t id) {
  Observation o;
  o.kind_ = Kind::symbol;
  o.active_ = {id};
  return o;
}

Observation Observation::real(std::vector<double> values) {
  Observation o;
  o.kind_ = Kind::real;
  o.dim_ = static_cast<std::uint32_t>(values.size());
  o.values_ = std::move(values);
  return o;
}

std::string Observation::key_string() const {
  switch (kind_) {
    case Kind::planes: {
      std::vector<unsigned char> bytes((dim_ + 7) / 8, 0);
      for (auto idx : active_) bytes[idx / 8] |= static_cast<unsigned char>(1U << (idx % 8));
      std::string out;
      out.reserve(bytes.size() * 2);
      for (unsigned char b : bytes) {
        out += kHex[b >> 4];
        out += kHex[b & 15];
      }
      return out;
    }
    case Kind::symbol: return "s" + std::to_string(active_.at(0));
    case Kind::real: {
      std::string out = "c";
      for (std::size_t i = 0; i < values_.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(static_cast<long>(std::floor(values_[i] / kContinuousKeyCell)));
      }
      return out;
    }
  }
  return {};
}

StateKey Observation::key() const { return fnv1a(key_string()); }

Observation Observation::from_key_string(Kind kind, std::string_view key, std::uint32_t dim) {
  switch (kind) {
    case Kind::planes: {
      if (key.size() != 2 * ((dim + 7) / 8))
        throw DataError("state key of length " + std::to_string(key.size()) + " does not fit " + std::to_string(dim) +
                        " plane cells");
      std::vector<std::uint32_t> active;
      for (std::size_t byte = 0; byte < key.size() / 2; ++byte) {
        const int hi = hex_value(key[2 * byte]), lo = hex_value(key[2 * byte + 1]);
        if (hi < 0 || lo < 0) throw DataError("state key is not lowercase hex");
        const unsigned v = static_cast<unsigned>(hi * 16 + lo);
        for (unsigned bit = 0; bit < 8; ++bit)
          if (v >> bit & 1U) active.push_back(static_cast<std::uint32_t>(byte * 8 + bit));
      }
      return planes(std::move(active), dim);
    }
    case Kind::symbol: {
      if (key.empty() || key[0] != 's') throw DataError("symbol key must look like s<id>");
      const long id = parse_long(key.substr(1));
      if (id < 0) throw DataError("negative symbol id");
      return symbol(static_cast<std::uint32_t>(id));
    }
    case Kind::real: break;
  }
  throw DataError("real observations cannot be rebuilt from their key");
}

// ---- Steps, trajectories, datasets ---------------------------------------------

Step make_step(Observation obs, int action, double reward) {
  Step s;
  s.key = obs.key();
  s.obs = std::move(obs);
  s.action = action;
  s.reward = reward;
  return s;
}

Step make_real_step(Observation obs, std::vector<double> action, double reward) {
  Step s;
  s.key = obs.key();
  s.obs = std::move(obs);
  s.real_action = std::move(action);
  s.reward = reward;
  return s;
}

double Trajectory::total_reward() const {
  double r = 0.0;
  for (const auto& s : steps) r += s.reward;
  return r;
}

std::size_t Dataset::total_steps() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

void Dataset::validate() const {
  if (labels && labels->size() != trajectories.size())
    throw DataError("dataset has " + std::to_string(trajectories.size()) + " trajectories but " +
                    std::to_string(labels->size()) + " labels");
  if (labels)
    for (int l : *labels)
      if (l < 0) throw DataError("negative label " + std::to_string(l));
}

ActionSpace action_space(std::string_view env) {
  if (env == "pathfollowing") return {true, 2};
  if (env == "reduction" || env == "bandit") return {false, 2};
  return {false, static_cast<std::size_t>(envs::kMoveCount)};
}

Observation::Kind observation_kind(std::string_view env) {
  if (env == "pathfollowing") return Observation::Kind::real;
  if (env == "reduction" || env == "bandit") return Observation::Kind::symbol;
  return Observation::Kind::planes;
}

ObservationSpace observation_space(const Dataset& data) {
  ObservationSpace space{observation_kind(data.meta.env), 0};
  if (space.kind == Observation::Kind::symbol) {
    for (const auto& t : data.trajectories)
      for (const auto& s : t.steps) space.dim = std::max<std::size_t>(space.dim, s.obs.symbol_id() + 1);
  } else if (space.kind == Observation::Kind::real) {
    space.dim = 2;
    for (const auto& t : data.trajectories)
      if (!t.steps.empty()) {
        space.dim = t.steps.front().obs.dim();
        break;
      }
  } else {
    space.dim = envs::observation_size(envs::parse_env(data.meta.env));
  }
  return space;
}

Dataset generate(envs::EnvId env, const std::vector<int>& experts, std::size_t episodes_per_expert,
                 std::uint64_t seed, unsigned jobs) {
  if (episodes_per_expert == 0) throw DataError("episodes per expert must be at least 1");
  const auto available = static_cast<int>(envs::expert_count(env));
  for (int e : experts)
    if (e < 0 || e >= available)
      throw DataError(std::string(envs::env_name(env)) + " has no expert " + std::to_string(e));

  Dataset data;
  data.meta = {std::string(envs::env_name(env)), experts, seed};
  const std::size_t total = experts.size() * episodes_per_expert;
  data.trajectories.resize(total);
  data.labels = std::vector<int>(total);
  parallel_for(total, jobs, [&](std::size_t i) {
    const int expert = experts[i / episodes_per_expert];
    const std::size_t episode = i % episodes_per_expert;
    Rng rng = make_rng({seed, static_cast<std::uint64_t>(env), static_cast<std::uint64_t>(expert), episode});
    data.trajectories[i] = envs::is_grid(env) ? rollout_grid(env, expert, rng) : rollout_path(expert, rng);
    (*data.labels)[i] = expert;
  });
  return data;
}

Dataset generate(envs::EnvId env, std::size_t episodes_per_expert, std::uint64_t seed, unsigned jobs) {
  std::vector<int> experts(envs::expert_count(env));
  std::iota(experts.begin(), experts.end(), 0);
  return generate(env, experts, episodes_per_expert, seed, jobs);
}

void write_dataset(const Dataset& data, std::ostream& out) {
  data.validate();
  json header = {{"format", kDatasetFormat}, {"env", data.meta.env}, {"experts", data.meta.experts}, {"seed", data.meta.seed}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    json record;
    record["label"] = data.labels ? json((*data.labels)[i]) : json(nullptr);
    json steps = json::array();
    for (const auto& s : data.trajectories[i].steps) steps.push_back(step_to_json(s));
    record["steps"] = std::move(steps);
    out << record.dump() << '\n';
  }
}

Dataset read_dataset(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError(source + ": empty file, missing header");
  ++line_no;
  Dataset data;
  try {
    const json header = json::parse(line);
    const auto format = header.at("format").get<std::string>();
    if (format != kDatasetFormat)
      throw DataError("format version mismatch: expected " + std::string(kDatasetFormat) + ", found " + format);
    data.meta.env = header.at("env").get<std::string>();
    data.meta.experts = header.at("experts").get<std::vector<int>>();
    data.meta.seed = header.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(source + ":1: malformed header: " + e.what());
  } catch (const DataError& e) {
    throw DataError(source + ":1: " + e.what());
  }

  const auto kind = observation_kind(data.meta.env);
  const auto dim = kind == Observation::Kind::planes
                       ? static_cast<std::uint32_t>(envs::observation_size(envs::parse_env(data.meta.env)))
                       : 0U;
  std::vector<std::optional<int>> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t record = data.trajectories.size();
    try {
      const json j = json::parse(line);
      const json& label = j.at("label");
      labels.push_back(label.is_null() ? std::nullopt : std::optional<int>(label.get<int>()));
      Trajectory traj;
      for (const auto& s : j.at("steps")) traj.steps.push_back(step_from_json(s, kind, dim));
      data.trajectories.push_back(std::move(traj));
    } catch (const std::exception& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": malformed record " + std::to_string(record) + ": " +
                      e.what());
    }
  }
  const bool any = std::any_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
  const bool all = std::all_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
  if (any && !all) throw DataError(source + ": labels present on some records but not others");
  if (any) {
    data.labels.emplace();
    for (const auto& l : labels) data.labels->push_back(*l);
  }
  data.validate();
  return data;
}

void save(const Dataset& data, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    write_dataset(data, out);
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Dataset load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_dataset(in, path.string());
}

std::pair<Dataset, std::vector<int>> shuffle_and_strip(const Dataset& data, std::uint64_t seed) {
  if (!data.labels) throw DataError("shuffle_and_strip needs a labeled dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  if (seed != kIdentityShuffle) {
    Rng rng = make_rng({seed, 0x5348554646ULL});
    std::shuffle(order.begin(), order.end(), rng);
  }
  Dataset out;
  out.meta = data.meta;
  std::vector<int> hidden;
  out.trajectories.reserve(order.size());
  hidden.reserve(order.size());
  for (auto i : order) {
    out.trajectories.push_back(data.trajectories[i]);
    hidden.push_back((*data.labels)[i]);
  }
  return {std::move(out), std::move(hidden)};
}

Dataset without_labels(Dataset data) {
  data.labels.reset();
  return data;
}

}  // namespace trajclust
