#pragma once

#include <bitset>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "trajclust/common.hpp"

/// Gridworld and point-mass environments with their scripted experts.
///
/// Grid layout: 9x9 cells, rows grow downwards, (0,0) is top-left and every
/// goal is the bottom-right cell (8,8) except in Extra, whose maps are random.
/// Five moves, in tie-break priority order: up, down, left, right, stay.
/// Each step the intended move is replaced, with probability 0.3, by a
/// uniformly random move. Episodes last at most 40 steps.
namespace trajclust::envs {

enum class EnvId : std::uint8_t { diagonal, takeball, extra, pathfollowing };

std::string_view env_name(EnvId env);
/// Throws DataError for unknown names.
EnvId parse_env(std::string_view name);
std::size_t expert_count(EnvId env);
bool is_grid(EnvId env);

inline constexpr int kGridSize = 9;
inline constexpr int kCells = kGridSize * kGridSize;
inline constexpr int kHorizon = 40;
inline constexpr double kActionNoise = 0.3;

enum class Move : std::uint8_t { up, down, left, right, stay };
inline constexpr int kMoveCount = 5;

struct Cell {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

inline int cell_index(Cell c) { return c.row * kGridSize + c.col; }
bool in_bounds(Cell c);
Cell moved(Cell c, Move m);

struct GridState {
  EnvId env = EnvId::diagonal;
  Cell agent;
  Cell goal{kGridSize - 1, kGridSize - 1};
  std::bitset<kCells> walls;
  /// Balls (Takeball) or special cells (Extra), in fixed slot order.
  std::vector<Cell> items;
  /// Bit i set once item i has been collected / visited.
  std::uint32_t collected = 0;
  int t = 0;
  bool done = false;

  bool item_present(std::size_t i) const { return !(collected >> i & 1U); }
  bool blocked(Cell c) const { return !in_bounds(c) || walls[cell_index(c)]; }
  friend bool operator==(const GridState&, const GridState&) = default;
};

/// Channel planes: walls, agent, goal, then one plane per item slot (a
/// collected item disappears from its plane).
std::size_t channel_count(EnvId env);
std::size_t observation_size(EnvId env);

/// Indices of the set cells of the stacked 9x9xC planes, ascending;
/// index = channel * 81 + row * 9 + col.
std::vector<std::uint16_t> observe(const GridState& state);
/// Agent cell decoded from an observation's agent plane.
Cell decode_agent(const std::vector<std::uint16_t>& active);

/// Initial state. Diagonal starts uniformly in the top-left 3x3 block;
/// Takeball starts at the centre; Extra draws a fresh connected map.
GridState reset(EnvId env, Rng& rng);

struct GridStep {
  GridState state;
  double reward = 0.0;
  bool done = false;
  /// True when the noise branch replaced the intended move.
  bool substituted = false;
  Move executed = Move::stay;
};

/// Advances one step. Moves into walls or off the grid are no-ops. Rewards
/// are always 0. Throws Error when `state` is terminal.
GridStep step(const GridState& state, Move intended, Rng& rng, double noise = kActionNoise);

/// A scripted expert; `index` is zero-based.
struct ExpertSpec {
  EnvId env = EnvId::diagonal;
  int index = 0;
};

/// Deterministic, stationary decision rule.
///
/// Diagonal: 0 right (down at the right wall), 1 down (right at the bottom
/// wall), 2 right iff row >= col, 3 right iff (row + col) is even, 4 right
/// iff odd; experts 2-4 fall back to the other move at a wall.
/// Takeball: expert i walks to ball i while it is on the board, then to the
/// goal. Extra: 0 visits both special cells on a shortest tour, 1 treats
/// special cells as walls, 2 takes a plain shortest path.
Move expert_action(const ExpertSpec& spec, const GridState& state);

std::string ascii(const GridState& state);

// ---- Pathfollowing ----------------------------------------------------------

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline constexpr double kPathStep = 0.1;
inline constexpr double kPathNoise = 0.05;
inline constexpr double kPathGoalRadius = 0.1;
inline constexpr double kWaypointRadius = 0.1;
inline constexpr Vec2 kPathGoal{1.0, 1.0};

/// Uniform in [-1.5, -0.5]^2.
Vec2 pathfollowing_reset(Rng& rng);
/// position + clamp(action, -1, 1) * step + N(0, sigma^2 I).
Vec2 pathfollowing_step(Vec2 position, Vec2 action, Rng& rng, double sigma = kPathNoise,
                        double step_scale = kPathStep);
bool pathfollowing_at_goal(Vec2 position);
/// Proportional controller toward the expert's current waypoint. Expert 0
/// heads straight for the goal, expert 1 goes via (-1, 1) (up first),
/// expert 2 via (1, -1) (right first).
Vec2 pathfollowing_expert(int index, Vec2 position);

}  // namespace trajclust::envs
