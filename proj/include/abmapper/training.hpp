#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abmapper/grid_world.hpp"
#include "abmapper/models.hpp"

namespace abm::train {

using env::GridMap;
using env::GridWorld;
using env::InitMode;
using env::Pos;
using models::ModelSet;
using nn::Tensor;

enum class Mode { ABMapper, AttentionOnly, BicNetOnly, MapperBaseline };
Mode parse_mode(const std::string& name);
std::string mode_name(Mode mode);

/// Full experiment description. Defaults follow the paper's reported settings
/// where it gives them; the rest are artifact choices, all overridable.
struct RunConfig {
  std::string map_path;
  std::string scenario;
  int n_agents = 2;
  int n_dyn = 0;
  InitMode init_mode = InitMode::Uniform;
  int max_steps = 0;  // 0: 4*(H+W)
  Mode mode = Mode::ABMapper;
  int z = 1;
  float gamma = 0.99f;
  float lambda = 0.3f;  // deviation penalty weight
  float step_penalty = -0.01f;
  float goal_reward = 10.0f;
  float collision_penalty = -0.1f;
  float lr_actor = 0.00004f;
  float lr_critic = 0.0001f;
  float tau = 0.001f;
  float lr_baseline = 0.0003f;
  int evolution_period = 100;
  int episodes = 1000;
  int eval_every = 200;
  int eval_episodes = 100;
  uint64_t seed = 1;
  int share_critic_encoders = -1;  // -1 auto (on above 64 agents), 0 off, 1 on
  bool advantage_baseline = false;

  bool share_encoders_resolved() const {
    if (share_critic_encoders >= 0) return share_critic_encoders != 0;
    return n_agents > 64;
  }
  env::RewardConfig reward_config() const {
    return {step_penalty, goal_reward, collision_penalty, lambda, gamma};
  }
  // BicNetOnly couples the networks under a single learning rate; the
  // baseline trains both nets at its own rate.
  float resolved_lr_actor() const {
    return mode == Mode::MapperBaseline ? lr_baseline : lr_actor;
  }
  float resolved_lr_critic() const {
    if (mode == Mode::MapperBaseline) return lr_baseline;
    if (mode == Mode::BicNetOnly) return lr_actor;
    return lr_critic;
  }
};

/// Per-step record of the joint episode state. Observations/positions cover
/// all agents (they are context for the models); loss records exist only for
/// agents still live at the step.
struct StepData {
  Tensor obs;                     // [n, obs_len]
  std::vector<Pos> positions;     // at the time of observation
  std::vector<int> actions;       // Stay for done agents
  std::vector<float> rewards;     // 0 for done agents
  std::vector<uint8_t> live;      // live at step start
  std::vector<uint8_t> done_after;
};

struct Trajectory {
  int agents = 0;
  std::vector<StepData> steps;
  Tensor final_obs;
  std::vector<Pos> final_positions;
  std::vector<uint8_t> final_done;
  std::vector<int> bootstrap_actions;  // sampled at final obs when truncated
  std::vector<float> agent_return;
  int episode_len = 0;
  double success = 0.0;
  uint64_t world_hash = 0;
};

// --- Eq.-level operations ---------------------------------------------------

// y = r + gamma * q_next * (1 - done); treated as a constant downstream.
inline float td_target(float r, float gamma, float q_next, bool done) {
  return done ? r : r + gamma * q_next;
}

// -sum(log_prob * y). Inputs aligned; sums in double.
double actor_loss(std::span<const float> log_probs, std::span<const float> y);
// sum((q - y)^2).
double critic_loss(std::span<const float> q, std::span<const float> y);

// --- Learner ----------------------------------------------------------------

/// Everything learnable for one run: a single model set for the shared-model
/// modes, one per agent for the Mapper baseline.
struct Learner {
  Mode mode = Mode::ABMapper;
  models::ModelDims dims;
  int n_agents = 0;
  int z = 1;
  bool share_encoders = false;
  std::vector<std::unique_ptr<ModelSet>> sets;

  bool per_agent() const { return mode == Mode::MapperBaseline; }
  static Learner create(Mode mode, const models::ModelDims& dims, int n_agents, int z,
                        bool share_encoders, uint64_t init_seed);
};

void save_checkpoint(const Learner& learner, const std::string& base_path,
                     const std::vector<std::pair<std::string, std::string>>& extra_meta = {});
Learner load_checkpoint(const std::string& base_path);

// --- Episode machinery -------------------------------------------------------

// Samples (or argmaxes) actions from the learner's actor(s) each step until
// all_done or max_steps. When `record` is false the trajectory carries only
// the summary fields.
Trajectory run_episode(GridWorld& world, const Learner& learner, bool greedy, Rng& rng,
                       bool record);

/// Flattened training batch assembled from a trajectory.
struct UpdateBatch {
  int steps = 0, agents = 0;
  Tensor obs, next_obs;                    // [T*n, obs_len]
  std::vector<int> actions, next_actions;  // per row
  std::vector<std::vector<Pos>> positions, next_positions;
  std::vector<models::CriticRecord> records;
  std::vector<float> rewards;     // per record
  std::vector<uint8_t> terminal;  // per record
};
UpdateBatch build_update_batch(const Trajectory& traj);

// TD targets per record, from the target critic with the executed next
// actions (gradient-free constants).
std::vector<float> compute_td_targets(const Learner& learner, const UpdateBatch& batch,
                                      float gamma);

struct UpdateStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  bool actor_clipped = false;
  bool critic_clipped = false;
};

// One on-policy update from a whole-episode batch: critic step (Eq. 3),
// actor step (Eq. 1), then target soft update. Throws NonFiniteLoss on
// divergence.
UpdateStats update(Learner& learner, const Trajectory& traj, const RunConfig& config);

// Softmax-normalized period returns; every agent samples a source model and
// copies its parameters (moments reset). Returns the assignment per agent.
std::vector<int> mapper_evolution(Learner& learner, std::span<const double> period_returns,
                                  Rng& rng);

struct EvalStats {
  double success_mean = 0.0, success_std = 0.0;
  double mean_steps = 0.0, mean_reward = 0.0;
  int episodes = 0;
};
// Greedy evaluation over n_episodes distinct seeds; episodes run in parallel
// over read-only parameters, aggregated in episode order.
EvalStats evaluate(const Learner& learner, const GridMap& map, const RunConfig& config,
                   int n_episodes, uint64_t seed_base);

// --- Trainer ------------------------------------------------------------------

struct TrainResult {
  double final_eval_success = 0.0;
  std::string final_checkpoint;
};

/// Owns the training loop and the run artifacts (metrics.csv, eval.csv,
/// checkpoints, train.log) inside an existing output directory.
class Trainer {
 public:
  Trainer(RunConfig config, GridMap map, std::string out_dir);
  TrainResult run(std::ostream* console = nullptr);
  const Learner& learner() const { return learner_; }

 private:
  RunConfig config_;
  GridMap map_;
  std::string out_dir_;
  Learner learner_;
};

}  // namespace abm::train
