#include "trajclust/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

namespace trajclust::envs {

namespace {

constexpr std::array<Move, 4> kMoves = {Move::up, Move::down, Move::left, Move::right};
constexpr int kUnreachable = std::numeric_limits<int>::max();

using DistanceMap = std::array<int, kCells>;

/// Breadth-first distances to `target` over cells not blocked by the state's
/// walls or by `extra_blocked`.
DistanceMap distances_to(const GridState& s, Cell target, const std::bitset<kCells>& extra_blocked) {
  DistanceMap dist;
  dist.fill(kUnreachable);
  if (s.blocked(target)) return dist;
  std::deque<Cell> queue{target};
  dist[cell_index(target)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (Move m : kMoves) {
      const Cell n = moved(c, m);
      if (s.blocked(n) || extra_blocked[cell_index(n)] || dist[cell_index(n)] != kUnreachable) continue;
      dist[cell_index(n)] = dist[cell_index(c)] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

/// First move in priority order that decreases the distance; stay when
/// already there or the target is unreachable.
Move descend(const GridState& s, const DistanceMap& dist) {
  const int here = dist[cell_index(s.agent)];
  if (here == 0 || here == kUnreachable) return Move::stay;
  for (Move m : kMoves) {
    const Cell n = moved(s.agent, m);
    if (!s.blocked(n) && dist[cell_index(n)] == here - 1) return m;
  }
  return Move::stay;
}

Move toward(const GridState& s, Cell target, const std::bitset<kCells>& avoid = {}) {
  auto dist = distances_to(s, target, avoid);
  if (dist[cell_index(s.agent)] == kUnreachable && avoid.any()) dist = distances_to(s, target, {});
  return descend(s, dist);
}

/// Prefer `first`; fall back to `second` when `first` hits the boundary.
Move prefer(const GridState& s, Move first, Move second) {
  if (!s.blocked(moved(s.agent, first))) return first;
  if (!s.blocked(moved(s.agent, second))) return second;
  return Move::stay;
}

Move diagonal_expert(int index, const GridState& s) {
  const int r = s.agent.row, c = s.agent.col;
  if (s.agent == s.goal) return Move::stay;
  bool go_right = false;
  switch (index) {
    case 0: go_right = true; break;
    case 1: go_right = false; break;
    case 2: go_right = r >= c; break;
    case 3: go_right = (r + c) % 2 == 0; break;
    case 4: go_right = (r + c) % 2 == 1; break;
    default: throw DataError("diagonal has no expert " + std::to_string(index));
  }
  return go_right ? prefer(s, Move::right, Move::down) : prefer(s, Move::down, Move::right);
}

Move takeball_expert(int index, const GridState& s) {
  if (index < 0 || index >= static_cast<int>(s.items.size()))
    throw DataError("takeball has no expert " + std::to_string(index));
  if (s.item_present(static_cast<std::size_t>(index))) return toward(s, s.items[static_cast<std::size_t>(index)]);
  return toward(s, s.goal);
}

Move extra_expert(int index, const GridState& s) {
  std::bitset<kCells> specials;
  std::vector<Cell> remaining;
  for (std::size_t i = 0; i < s.items.size(); ++i)
    if (s.item_present(i)) {
      specials.set(static_cast<std::size_t>(cell_index(s.items[i])));
      remaining.push_back(s.items[i]);
    }
  switch (index) {
    case 0: {
      if (remaining.empty()) return toward(s, s.goal);
      std::bitset<kCells> goal_cell;
      goal_cell.set(static_cast<std::size_t>(cell_index(s.goal)));
      if (remaining.size() == 1) return toward(s, remaining[0], goal_cell);
      // Two specials left: pick the visiting order with the shorter tour.
      const auto d0 = distances_to(s, remaining[0], goal_cell);
      const auto d1 = distances_to(s, remaining[1], goal_cell);
      const auto dg = distances_to(s, s.goal, {});
      auto add = [](long a, long b) { return (a == kUnreachable || b == kUnreachable) ? long{kUnreachable} * 3 : a + b; };
      const long via0 = add(add(d0[cell_index(s.agent)], d0[cell_index(remaining[1])]), dg[cell_index(remaining[1])]);
      const long via1 = add(add(d1[cell_index(s.agent)], d1[cell_index(remaining[0])]), dg[cell_index(remaining[0])]);
      return toward(s, via1 < via0 ? remaining[1] : remaining[0], goal_cell);
    }
    case 1: return toward(s, s.goal, specials);
    case 2: return toward(s, s.goal);
    default: throw DataError("extra has no expert " + std::to_string(index));
  }
}

Cell random_free_cell(const GridState& s, const std::vector<Cell>& taken, Rng& rng) {
  std::uniform_int_distribution<int> coord(0, kGridSize - 1);
  for (;;) {
    const Cell c{coord(rng), coord(rng)};
    if (s.blocked(c) || std::find(taken.begin(), taken.end(), c) != taken.end()) continue;
    return c;
  }
}

GridState extra_map(Rng& rng) {
  constexpr double kWallDensity = 0.2;
  std::bernoulli_distribution wall(kWallDensity);
  for (;;) {
    GridState s;
    s.env = EnvId::extra;
    for (int i = 0; i < kCells; ++i) s.walls[static_cast<std::size_t>(i)] = wall(rng);
    std::vector<Cell> taken;
    if (s.walls.count() > static_cast<std::size_t>(kCells - 4)) continue;
    s.agent = random_free_cell(s, taken, rng);
    taken.push_back(s.agent);
    s.goal = random_free_cell(s, taken, rng);
    taken.push_back(s.goal);
    for (int k = 0; k < 2; ++k) {
      s.items.push_back(random_free_cell(s, taken, rng));
      taken.push_back(s.items.back());
    }
    // Every special cell and the goal must be reachable from the start.
    const auto from_start = distances_to(s, s.agent, {});
    bool connected = from_start[cell_index(s.goal)] != kUnreachable;
    for (Cell c : s.items) connected = connected && from_start[cell_index(c)] != kUnreachable;
    if (connected) return s;
  }
}

}  // namespace

std::string_view env_name(EnvId env) {
  switch (env) {
    case EnvId::diagonal: return "diagonal";
    case EnvId::takeball: return "takeball";
    case EnvId::extra: return "extra";
    case EnvId::pathfollowing: return "pathfollowing";
  }
  return "unknown";
}

EnvId parse_env(std::string_view name) {
  for (EnvId e : {EnvId::diagonal, EnvId::takeball, EnvId::extra, EnvId::pathfollowing})
    if (env_name(e) == name) return e;
  throw DataError("unknown environment '" + std::string(name) + "'");
}

std::size_t expert_count(EnvId env) {
  switch (env) {
    case EnvId::diagonal: return 5;
    case EnvId::takeball: return 4;
    case EnvId::extra: return 3;
    case EnvId::pathfollowing: return 3;
  }
  return 0;
}

bool is_grid(EnvId env) { return env != EnvId::pathfollowing; }

bool in_bounds(Cell c) { return c.row >= 0 && c.row < kGridSize && c.col >= 0 && c.col < kGridSize; }

Cell moved(Cell c, Move m) {
  switch (m) {
    case Move::up: return {c.row - 1, c.col};
    case Move::down: return {c.row + 1, c.col};
    case Move::left: return {c.row, c.col - 1};
    case Move::right: return {c.row, c.col + 1};
    case Move::stay: return c;
  }
  return c;
}

std::size_t channel_count(EnvId env) {
  switch (env) {
    case EnvId::diagonal: return 3;
    case EnvId::takeball: return 7;
    case EnvId::extra: return 5;
    case EnvId::pathfollowing: return 0;
  }
  return 0;
}

std::size_t observation_size(EnvId env) {
  return env == EnvId::pathfollowing ? 2 : channel_count(env) * kCells;
}

std::vector<std::uint16_t> observe(const GridState& s) {
  std::vector<std::uint16_t> active;
  for (int i = 0; i < kCells; ++i)
    if (s.walls[static_cast<std::size_t>(i)]) active.push_back(static_cast<std::uint16_t>(i));
  active.push_back(static_cast<std::uint16_t>(kCells + cell_index(s.agent)));
  active.push_back(static_cast<std::uint16_t>(2 * kCells + cell_index(s.goal)));
  for (std::size_t i = 0; i < s.items.size(); ++i)
    if (s.item_present(i)) active.push_back(static_cast<std::uint16_t>((3 + i) * kCells + cell_index(s.items[i])));
  return active;
}

Cell decode_agent(const std::vector<std::uint16_t>& active) {
  for (auto idx : active)
    if (idx >= kCells && idx < 2 * kCells) return {(idx - kCells) / kGridSize, (idx - kCells) % kGridSize};
  throw DataError("observation has no agent plane entry");
}

GridState reset(EnvId env, Rng& rng) {
  GridState s;
  s.env = env;
  switch (env) {
    case EnvId::diagonal: {
      std::uniform_int_distribution<int> corner(0, 2);
      s.agent = {corner(rng), corner(rng)};
      break;
    }
    case EnvId::takeball:
      s.agent = {4, 4};
      s.items = {{1, 4}, {7, 4}, {4, 1}, {4, 7}};
      break;
    case EnvId::extra: return extra_map(rng);
    case EnvId::pathfollowing: throw Error("pathfollowing is not a grid environment");
  }
  return s;
}

GridStep step(const GridState& state, Move intended, Rng& rng, double noise) {
  if (state.done) throw Error("step called on a terminal state");
  GridStep out;
  out.state = state;
  std::bernoulli_distribution substitute(noise);
  Move executed = intended;
  if (noise > 0.0 && substitute(rng)) {
    out.substituted = true;
    std::uniform_int_distribution<int> any(0, kMoveCount - 1);
    executed = static_cast<Move>(any(rng));
  }
  out.executed = executed;
  GridState& s = out.state;
  const Cell next = moved(s.agent, executed);
  if (!s.blocked(next)) s.agent = next;
  for (std::size_t i = 0; i < s.items.size(); ++i)
    if (s.item_present(i) && s.items[i] == s.agent) s.collected |= 1U << i;
  ++s.t;
  bool at_goal = s.agent == s.goal;
  if (s.env == EnvId::takeball) at_goal = at_goal && s.collected != 0;
  s.done = at_goal || s.t >= kHorizon;
  out.done = s.done;
  return out;
}

Move expert_action(const ExpertSpec& spec, const GridState& state) {
  switch (spec.env) {
    case EnvId::diagonal: return diagonal_expert(spec.index, state);
    case EnvId::takeball: return takeball_expert(spec.index, state);
    case EnvId::extra: return extra_expert(spec.index, state);
    case EnvId::pathfollowing: break;
  }
  throw Error("expert_action: pathfollowing experts act through pathfollowing_expert");
}

std::string ascii(const GridState& s) {
  std::string out;
  for (int r = 0; r < kGridSize; ++r) {
    for (int c = 0; c < kGridSize; ++c) {
      const Cell cell{r, c};
      char ch = '.';
      if (s.walls[static_cast<std::size_t>(cell_index(cell))]) ch = '#';
      if (cell == s.goal) ch = 'G';
      for (std::size_t i = 0; i < s.items.size(); ++i)
        if (s.item_present(i) && s.items[i] == cell) ch = static_cast<char>('1' + i);
      if (cell == s.agent) ch = 'A';
      out += ch;
    }
    out += '\n';
  }
  return out;
}

Vec2 pathfollowing_reset(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.5, -0.5);
  const double x = u(rng);
  const double y = u(rng);
  return {x, y};
}

Vec2 pathfollowing_step(Vec2 p, Vec2 a, Rng& rng, double sigma, double step_scale) {
  const double ax = std::clamp(a.x, -1.0, 1.0);
  const double ay = std::clamp(a.y, -1.0, 1.0);
  Vec2 next{p.x + ax * step_scale, p.y + ay * step_scale};
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    next.x += noise(rng);
    next.y += noise(rng);
  }
  return next;
}

bool pathfollowing_at_goal(Vec2 p) { return std::hypot(p.x - kPathGoal.x, p.y - kPathGoal.y) < kPathGoalRadius; }

Vec2 pathfollowing_expert(int index, Vec2 p) {
  Vec2 target = kPathGoal;
  switch (index) {
    case 0: break;
    case 1:
      if (p.y < 1.0 - kWaypointRadius) target = {-1.0, 1.0};
      break;
    case 2:
      if (p.x < 1.0 - kWaypointRadius) target = {1.0, -1.0};
      break;
    default: throw DataError("pathfollowing has no expert " + std::to_string(index));
  }
  return {std::clamp((target.x - p.x) / kPathStep, -1.0, 1.0), std::clamp((target.y - p.y) / kPathStep, -1.0, 1.0)};
}

}  // namespace trajclust::envs
