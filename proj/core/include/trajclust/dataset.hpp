#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trajclust/envs.hpp"

namespace trajclust {

/// Canonical hash of an observation; equal observations share a key.
using StateKey = std::uint64_t;

/// Side length of the grid used to key continuous observations.
inline constexpr double kContinuousKeyCell = 0.05;

class Observation {
 public:
  enum class Kind : std::uint8_t {
    planes,  ///< binary channel planes, stored as the set of active cells
    symbol,  ///< an abstract state id (graph reductions, bandits)
    real,    ///< real feature vector (Pathfollowing)
  };

  Observation() = default;
  static Observation planes(std::vector<std::uint32_t> active, std::uint32_t dim);
  static Observation symbol(std::uint32_t id);
  static Observation real(std::vector<double> values);

  Kind kind() const { return kind_; }
  /// Active plane cells, or the single symbol id.
  std::span<const std::uint32_t> active() const { return active_; }
  std::span<const double> values() const { return values_; }
  std::uint32_t symbol_id() const { return active_.at(0); }
  /// Plane count x 81 for planes, the vector length for real observations,
  /// 0 for symbols (their range is a property of the dataset).
  std::size_t dim() const { return dim_; }

  /// On-disk key: lowercase hex of the LSB-first packed bitmap (planes),
  /// "s<id>" (symbol) or "c<ix>,<iy>" grid cell of size kContinuousKeyCell (real).
  std::string key_string() const;
  StateKey key() const;

  /// Inverse of key_string() for planes and symbols. Real observations are
  /// not recoverable from their key and throw DataError.
  static Observation from_key_string(Kind kind, std::string_view key, std::uint32_t dim);

  friend bool operator==(const Observation&, const Observation&) = default;

 private:
  Kind kind_ = Kind::symbol;
  std::uint32_t dim_ = 0;
  std::vector<std::uint32_t> active_;
  std::vector<double> values_;
};

struct ActionSpace {
  bool continuous = false;
  /// Number of discrete actions, or the continuous action dimension.
  std::size_t size = envs::kMoveCount;
  friend bool operator==(const ActionSpace&, const ActionSpace&) = default;
};

struct Step {
  Observation obs;
  StateKey key = 0;
  int action = 0;                    ///< discrete action index
  std::vector<double> real_action;   ///< continuous action; empty when discrete
  double reward = 0.0;
  friend bool operator==(const Step&, const Step&) = default;
};

Step make_step(Observation obs, int action, double reward = 0.0);
Step make_real_step(Observation obs, std::vector<double> action, double reward = 0.0);

struct Trajectory {
  std::vector<Step> steps;
  std::size_t size() const { return steps.size(); }
  double total_reward() const;
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct DatasetMeta {
  std::string env;           ///< environment id, or "reduction" / "bandit"
  std::vector<int> experts;  ///< zero-based expert ids used for generation
  std::uint64_t seed = 0;
  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

/// Trajectories plus optional ground-truth policy labels.
struct Dataset {
  DatasetMeta meta;
  std::vector<Trajectory> trajectories;
  std::optional<std::vector<int>> labels;

  std::size_t size() const { return trajectories.size(); }
  bool labeled() const { return labels.has_value(); }
  std::size_t total_steps() const;
  /// Throws DataError when the label vector disagrees with the trajectories.
  void validate() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

using LabeledDataset = Dataset;

ActionSpace action_space(std::string_view env);
Observation::Kind observation_kind(std::string_view env);

struct ObservationSpace {
  Observation::Kind kind = Observation::Kind::planes;
  std::size_t dim = 0;
};
/// Feature layout of the dataset's observations; symbol datasets span
/// ids [0, max id].
ObservationSpace observation_space(const Dataset& data);

/// Balanced expert dataset: episodes_per_expert rollouts of each expert in
/// `experts` (expert-major order), label = expert id. Each episode uses its
/// own RNG stream derived from (seed, env, expert, episode), so the result
/// is independent of `jobs`.
Dataset generate(envs::EnvId env, const std::vector<int>& experts, std::size_t episodes_per_expert,
                 std::uint64_t seed, unsigned jobs = 1);
/// All experts of the environment.
Dataset generate(envs::EnvId env, std::size_t episodes_per_expert, std::uint64_t seed, unsigned jobs = 1);

inline constexpr std::string_view kDatasetFormat = "trajclust-v1";

/// Line-delimited JSON: a header object, then one record per trajectory.
void save(const Dataset& data, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);
void write_dataset(const Dataset& data, std::ostream& out);
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");

/// Seed for which shuffle_and_strip keeps the original order.
inline constexpr std::uint64_t kIdentityShuffle = 0;

/// Permutes trajectories and moves the labels out of the dataset. The
/// returned label vector follows the permuted order.
std::pair<Dataset, std::vector<int>> shuffle_and_strip(const Dataset& data, std::uint64_t seed);

Dataset without_labels(Dataset data);

}  // namespace trajclust
