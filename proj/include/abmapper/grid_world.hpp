#pragma once

#include <array>
#include <string>
#include <vector>

#include "abmapper/astar.hpp"
#include "abmapper/grid_map.hpp"

namespace abm::env {

enum class EntityKind { Agent, DynamicObstacle };

struct EntityState {
  EntityKind kind = EntityKind::Agent;
  int id = 0;
  Pos pos, goal;
  bool done = false;
};

/// Egocentric multi-channel occupancy window. Channels: 0 static obstacles
/// (out-of-bounds counts as obstacle), 1 other agents, 2 dynamic obstacles,
/// 3 own reference-path cells plus the goal cell clamped to the window.
struct Observation {
  static constexpr int kChannels = 4;
  static constexpr int kFov = 11;
  static constexpr int kRadius = kFov / 2;
  std::array<float, kChannels * kFov * kFov> data{};

  float at(int ch, int r, int c) const {
    return data[static_cast<size_t>((ch * kFov + r) * kFov + c)];
  }
  float& at(int ch, int r, int c) {
    return data[static_cast<size_t>((ch * kFov + r) * kFov + c)];
  }
};

struct RewardConfig {
  float step_penalty = -0.01f;
  float goal_reward = 10.0f;
  float collision_penalty = -0.1f;
  float deviation_weight = 0.3f;  // lambda
  float discount = 0.99f;         // gamma
};

// Per-agent reward decomposition, exposed for testing.
struct RewardParts {
  float step_penalty = 0.0f, goal_reward = 0.0f, collision_penalty = 0.0f, deviation = 0.0f;
  float total() const { return step_penalty + goal_reward + collision_penalty + deviation; }
};

struct StepResult {
  std::vector<float> rewards;
  std::vector<uint8_t> dones;       // cumulative done flags after the step
  std::vector<uint8_t> collisions;  // flagged this step
  bool all_done = false;
  std::vector<RewardParts> parts;   // info: reward decomposition per agent
};

enum class InitMode { Uniform, ClusteredCenter };

/// Deterministic, seedable grid-world simulator. Single-threaded per
/// instance; distinct instances may run in parallel.
class GridWorld {
 public:
  // Places agents and dynamic obstacles; computes reference paths.
  // Throws InsufficientFreeCells / NoPath when placement is impossible.
  GridWorld(GridMap map, int n_agents, int n_dyn, InitMode init_mode, uint64_t seed,
            RewardConfig reward = {}, int max_steps = 0);

  // Simultaneous-move transition; dynamic obstacles move first.
  StepResult step(const std::vector<Action>& actions);

  Observation observe(int agent_id) const;
  float offroute_distance(int agent_id) const;

  const GridMap& map() const { return map_; }
  const RewardConfig& reward_config() const { return reward_; }
  int num_agents() const { return static_cast<int>(agents_.size()); }
  int num_dynamic() const { return static_cast<int>(dyn_.size()); }
  const EntityState& agent(int id) const { return agents_[static_cast<size_t>(id)]; }
  Pos dynamic_pos(int id) const { return dyn_[static_cast<size_t>(id)].pos; }
  const plan::Path& reference_path(int agent_id) const {
    return ref_paths_[static_cast<size_t>(agent_id)];
  }
  std::vector<Pos> agent_positions() const;
  std::vector<uint8_t> done_flags() const;
  bool all_done() const;
  int steps_taken() const { return steps_; }
  int max_steps() const { return max_steps_; }

  // One text frame: map glyphs plus 'a'/'A' agent/done-agent, 'd' dynamic
  // obstacle, 'g' agent goal.
  std::string render_frame() const;

  // Rolling FNV-1a over all entity positions after each step.
  uint64_t trajectory_hash() const { return hash_.digest(); }

 private:
  int entity_at(Pos p) const;  // -1 empty, agent id, or n_agents+dyn id

  GridMap map_;
  RewardConfig reward_;
  int max_steps_ = 0;
  std::vector<EntityState> agents_;
  std::vector<plan::Path> ref_paths_;
  std::vector<plan::LraAgent> dyn_;
  std::vector<Pos> free_list_;
  std::vector<int> occupant_;  // per cell: -1 or entity index
  Rng rng_;
  int steps_ = 0;
  Fnv1a hash_;
};

// Fraction of agents done at episode end.
double success_rate(const std::vector<uint8_t>& done_flags);
double success_rate(const GridWorld& world);

// Formats a fraction the way results are reported (4 decimal places / percent).
std::string format_rate(double rate);
std::string format_percent(double rate);

}  // namespace abm::env
