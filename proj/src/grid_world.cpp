#include "abmapper/grid_world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace abm::env {

namespace {

// Draws one element from `pool` minus `taken`, uniformly. Returns false when
// nothing remains. Equivalent in distribution to rejection re-sampling, but
// terminates by construction.
bool draw_free(const std::vector<Pos>& pool, const std::vector<uint8_t>& taken,
               const GridMap& map, Rng& rng, Pos* out) {
  std::vector<Pos> candidates;
  candidates.reserve(pool.size());
  for (Pos p : pool)
    if (!taken[static_cast<size_t>(map.index(p))]) candidates.push_back(p);
  if (candidates.empty()) return false;
  *out = candidates[rng.next_below(candidates.size())];
  return true;
}

}  // namespace

GridWorld::GridWorld(GridMap map, int n_agents, int n_dyn, InitMode init_mode, uint64_t seed,
                     RewardConfig reward, int max_steps)
    : map_(std::move(map)), reward_(reward), rng_(derive_seed(seed, 0xE17)) {
  max_steps_ = max_steps > 0 ? max_steps : 4 * (map_.height + map_.width);
  free_list_ = map_.free_cells();
  if (n_agents < 1) throw Error(ErrorKind::InsufficientFreeCells, "need at least one agent");

  // Clustered starts draw from the central ceil(H/3) x ceil(W/3) rectangle.
  std::vector<Pos> start_pool = free_list_;
  if (init_mode == InitMode::ClusteredCenter) {
    const int ch = (map_.height + 2) / 3, cw = (map_.width + 2) / 3;
    const int r0 = (map_.height - ch) / 2, c0 = (map_.width - cw) / 2;
    start_pool.clear();
    for (Pos p : free_list_)
      if (p.row >= r0 && p.row < r0 + ch && p.col >= c0 && p.col < c0 + cw)
        start_pool.push_back(p);
  }

  Rng place_rng = rng_.fork(0x9A5E);
  std::vector<uint8_t> start_taken(static_cast<size_t>(map_.cell_count()), 0);
  std::vector<uint8_t> goal_taken(static_cast<size_t>(map_.cell_count()), 0);

  agents_.resize(static_cast<size_t>(n_agents));
  for (int i = 0; i < n_agents; ++i) {
    EntityState& a = agents_[static_cast<size_t>(i)];
    a.kind = EntityKind::Agent;
    a.id = i;
    if (!draw_free(start_pool, start_taken, map_, place_rng, &a.pos))
      throw Error(ErrorKind::InsufficientFreeCells,
                  "no free start cell for agent " + std::to_string(i));
    start_taken[static_cast<size_t>(map_.index(a.pos))] = 1;
  }
  ref_paths_.resize(static_cast<size_t>(n_agents));
  for (int i = 0; i < n_agents; ++i) {
    EntityState& a = agents_[static_cast<size_t>(i)];
    // Goal: distinct from all other goals and from the agent's own start,
    // and reachable over the static map. Unreachable candidates are redrawn.
    std::vector<uint8_t> taken = goal_taken;
    taken[static_cast<size_t>(map_.index(a.pos))] = 1;
    while (true) {
      if (!draw_free(free_list_, taken, map_, place_rng, &a.goal))
        throw Error(ErrorKind::InsufficientFreeCells,
                    "no reachable goal cell for agent " + std::to_string(i));
      auto path = plan::reference_path(map_, a.pos, a.goal);
      if (path.has_value()) {
        ref_paths_[static_cast<size_t>(i)] = std::move(*path);
        break;
      }
      taken[static_cast<size_t>(map_.index(a.goal))] = 1;  // unreachable; exclude
    }
    goal_taken[static_cast<size_t>(map_.index(a.goal))] = 1;
  }

  dyn_.resize(static_cast<size_t>(n_dyn));
  for (int i = 0; i < n_dyn; ++i) {
    plan::LraAgent& d = dyn_[static_cast<size_t>(i)];
    if (!draw_free(free_list_, start_taken, map_, place_rng, &d.pos))
      throw Error(ErrorKind::InsufficientFreeCells,
                  "no free start cell for dynamic obstacle " + std::to_string(i));
    start_taken[static_cast<size_t>(map_.index(d.pos))] = 1;
    // Uniform random goal anywhere free (may coincide with other goals).
    do {
      d.goal = free_list_[place_rng.next_below(free_list_.size())];
    } while (d.goal == d.pos && free_list_.size() > 1);
  }

  occupant_.assign(static_cast<size_t>(map_.cell_count()), -1);
  for (int i = 0; i < n_agents; ++i) occupant_[static_cast<size_t>(map_.index(agents_[i].pos))] = i;
  for (int i = 0; i < n_dyn; ++i)
    occupant_[static_cast<size_t>(map_.index(dyn_[i].pos))] = n_agents + i;

  for (const auto& a : agents_) {
    hash_.update_value(a.pos.row);
    hash_.update_value(a.pos.col);
    hash_.update_value(a.goal.row);
    hash_.update_value(a.goal.col);
  }
  for (const auto& d : dyn_) {
    hash_.update_value(d.pos.row);
    hash_.update_value(d.pos.col);
  }
}

int GridWorld::entity_at(Pos p) const {
  return occupant_[static_cast<size_t>(map_.index(p))];
}

StepResult GridWorld::step(const std::vector<Action>& actions) {
  const int n = num_agents();
  if (static_cast<int>(actions.size()) != n)
    throw Error(ErrorKind::InvalidActionIndex,
                "expected " + std::to_string(n) + " actions, got " +
                    std::to_string(actions.size()));
  for (Action a : actions) {
    const int v = static_cast<int>(a);
    if (v < 0 || v >= kNumActions)
      throw Error(ErrorKind::InvalidActionIndex, "action index " + std::to_string(v));
  }
  if (all_done()) throw std::logic_error("step() on finished world");

  // (1) dynamic obstacles move first, sequentially by id over live occupancy
  std::vector<uint8_t> occupied(static_cast<size_t>(map_.cell_count()), 0);
  for (const auto& a : agents_) occupied[static_cast<size_t>(map_.index(a.pos))] = 1;
  for (const auto& d : dyn_) occupied[static_cast<size_t>(map_.index(d.pos))] = 1;
  for (auto& d : dyn_) {
    const int idx = map_.index(d.pos);
    occupied[static_cast<size_t>(idx)] = 0;  // own cell is not an obstacle to itself
    occupant_[static_cast<size_t>(idx)] = -1;
    plan::lra_step(map_, d, occupied, free_list_, rng_);
    occupied[static_cast<size_t>(map_.index(d.pos))] = 1;
  }
  const int n_dyn = num_dynamic();
  for (int i = 0; i < n_dyn; ++i)
    occupant_[static_cast<size_t>(map_.index(dyn_[i].pos))] = n + i;

  // (2)-(4) simultaneous agent resolution
  std::vector<uint8_t> was_done(static_cast<size_t>(n), 0);
  std::vector<Pos> target(static_cast<size_t>(n));
  std::vector<uint8_t> moving(static_cast<size_t>(n), 0);
  std::vector<uint8_t> collided(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const EntityState& a = agents_[static_cast<size_t>(i)];
    was_done[static_cast<size_t>(i)] = a.done ? 1 : 0;
    target[static_cast<size_t>(i)] = a.pos;
    if (a.done || actions[static_cast<size_t>(i)] == Action::Stay) continue;
    const Pos t = apply_action(a.pos, actions[static_cast<size_t>(i)]);
    if (!map_.free_cell(t)) {  // static obstacle or out of bounds
      collided[static_cast<size_t>(i)] = 1;
      continue;
    }
    const int occ = occupant_[static_cast<size_t>(map_.index(t))];
    if (occ >= n) {  // dynamic obstacle (post-move position)
      collided[static_cast<size_t>(i)] = 1;
      continue;
    }
    target[static_cast<size_t>(i)] = t;
    moving[static_cast<size_t>(i)] = 1;
  }

  // (3) same-target groups: lowest id moves, others stay flagged
  for (int i = 0; i < n; ++i) {
    if (!moving[static_cast<size_t>(i)]) continue;
    for (int j = i + 1; j < n; ++j) {
      if (!moving[static_cast<size_t>(j)]) continue;
      if (target[static_cast<size_t>(j)] == target[static_cast<size_t>(i)]) {
        moving[static_cast<size_t>(j)] = 0;
        target[static_cast<size_t>(j)] = agents_[static_cast<size_t>(j)].pos;
        collided[static_cast<size_t>(j)] = 1;
      }
    }
  }
  // (4) swap conflicts: both stay, both flagged
  for (int i = 0; i < n; ++i) {
    if (!moving[static_cast<size_t>(i)]) continue;
    for (int j = i + 1; j < n; ++j) {
      if (!moving[static_cast<size_t>(j)]) continue;
      if (target[static_cast<size_t>(i)] == agents_[static_cast<size_t>(j)].pos &&
          target[static_cast<size_t>(j)] == agents_[static_cast<size_t>(i)].pos) {
        moving[static_cast<size_t>(i)] = 0;
        moving[static_cast<size_t>(j)] = 0;
        target[static_cast<size_t>(i)] = agents_[static_cast<size_t>(i)].pos;
        target[static_cast<size_t>(j)] = agents_[static_cast<size_t>(j)].pos;
        collided[static_cast<size_t>(i)] = 1;
        collided[static_cast<size_t>(j)] = 1;
      }
    }
  }
  // Cascade: a move into a cell whose occupant ends up staying is cancelled.
  // Runs to fixpoint so cancellations propagate down chains.
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < n; ++i) {
      if (!moving[static_cast<size_t>(i)]) continue;
      const int occ = occupant_[static_cast<size_t>(map_.index(target[static_cast<size_t>(i)]))];
      if (occ >= 0 && occ < n && occ != i && !moving[static_cast<size_t>(occ)]) {
        moving[static_cast<size_t>(i)] = 0;
        target[static_cast<size_t>(i)] = agents_[static_cast<size_t>(i)].pos;
        collided[static_cast<size_t>(i)] = 1;
        changed = true;
      }
    }
  }

  // apply moves
  for (int i = 0; i < n; ++i)
    if (moving[static_cast<size_t>(i)])
      occupant_[static_cast<size_t>(map_.index(agents_[static_cast<size_t>(i)].pos))] = -1;
  for (int i = 0; i < n; ++i) {
    if (!moving[static_cast<size_t>(i)]) continue;
    agents_[static_cast<size_t>(i)].pos = target[static_cast<size_t>(i)];
    occupant_[static_cast<size_t>(map_.index(target[static_cast<size_t>(i)]))] = i;
  }

  // (5)-(6) done flags and rewards
  StepResult result;
  result.rewards.assign(static_cast<size_t>(n), 0.0f);
  result.dones.assign(static_cast<size_t>(n), 0);
  result.collisions = collided;
  result.parts.assign(static_cast<size_t>(n), RewardParts{});
  for (int i = 0; i < n; ++i) {
    EntityState& a = agents_[static_cast<size_t>(i)];
    if (!was_done[static_cast<size_t>(i)]) {
      const bool reached = a.pos == a.goal;
      if (reached) a.done = true;
      RewardParts& parts = result.parts[static_cast<size_t>(i)];
      parts.step_penalty = reward_.step_penalty;
      parts.goal_reward = reached ? reward_.goal_reward : 0.0f;
      parts.collision_penalty = collided[static_cast<size_t>(i)] ? reward_.collision_penalty : 0.0f;
      parts.deviation = -reward_.deviation_weight * offroute_distance(i);
      result.rewards[static_cast<size_t>(i)] = parts.total();
    }
    result.dones[static_cast<size_t>(i)] = a.done ? 1 : 0;
  }
  result.all_done = all_done();
  ++steps_;

  for (const auto& a : agents_) {
    hash_.update_value(a.pos.row);
    hash_.update_value(a.pos.col);
  }
  for (const auto& d : dyn_) {
    hash_.update_value(d.pos.row);
    hash_.update_value(d.pos.col);
  }
  for (float r : result.rewards) hash_.update_value(r);
  return result;
}

Observation GridWorld::observe(int agent_id) const {
  const EntityState& self = agents_[static_cast<size_t>(agent_id)];
  Observation obs;
  const int rad = Observation::kRadius;
  for (int wr = 0; wr < Observation::kFov; ++wr) {
    for (int wc = 0; wc < Observation::kFov; ++wc) {
      const Pos p{self.pos.row + wr - rad, self.pos.col + wc - rad};
      if (!map_.in_bounds(p)) {
        obs.at(0, wr, wc) = 1.0f;  // out of bounds counts as obstacle
        continue;
      }
      if (map_.obstacle(p)) obs.at(0, wr, wc) = 1.0f;
      const int occ = entity_at(p);
      if (occ >= 0) {
        if (occ < num_agents()) {
          if (occ != agent_id) obs.at(1, wr, wc) = 1.0f;  // self excluded
        } else {
          obs.at(2, wr, wc) = 1.0f;
        }
      }
    }
  }
  for (Pos p : ref_paths_[static_cast<size_t>(agent_id)].cells) {
    const int wr = p.row - self.pos.row + rad, wc = p.col - self.pos.col + rad;
    if (wr >= 0 && wr < Observation::kFov && wc >= 0 && wc < Observation::kFov)
      obs.at(3, wr, wc) = 1.0f;
  }
  const int gr = std::clamp(self.goal.row - self.pos.row, -rad, rad) + rad;
  const int gc = std::clamp(self.goal.col - self.pos.col, -rad, rad) + rad;
  obs.at(3, gr, gc) = 1.0f;
  return obs;
}

float GridWorld::offroute_distance(int agent_id) const {
  const EntityState& a = agents_[static_cast<size_t>(agent_id)];
  const auto& cells = ref_paths_[static_cast<size_t>(agent_id)].cells;
  int best = manhattan(a.pos, cells.front());
  for (Pos p : cells) best = std::min(best, manhattan(a.pos, p));
  return static_cast<float>(best);
}

std::vector<Pos> GridWorld::agent_positions() const {
  std::vector<Pos> out;
  out.reserve(agents_.size());
  for (const auto& a : agents_) out.push_back(a.pos);
  return out;
}

std::vector<uint8_t> GridWorld::done_flags() const {
  std::vector<uint8_t> out;
  out.reserve(agents_.size());
  for (const auto& a : agents_) out.push_back(a.done ? 1 : 0);
  return out;
}

bool GridWorld::all_done() const {
  for (const auto& a : agents_)
    if (!a.done) return false;
  return true;
}

std::string GridWorld::render_frame() const {
  std::vector<std::string> rows(static_cast<size_t>(map_.height),
                                std::string(static_cast<size_t>(map_.width), '.'));
  for (int r = 0; r < map_.height; ++r)
    for (int c = 0; c < map_.width; ++c)
      if (map_.obstacle({r, c})) rows[static_cast<size_t>(r)][static_cast<size_t>(c)] = '#';
  for (const auto& a : agents_)
    rows[static_cast<size_t>(a.goal.row)][static_cast<size_t>(a.goal.col)] = 'g';
  for (const auto& d : dyn_)
    rows[static_cast<size_t>(d.pos.row)][static_cast<size_t>(d.pos.col)] = 'd';
  for (const auto& a : agents_)
    rows[static_cast<size_t>(a.pos.row)][static_cast<size_t>(a.pos.col)] = a.done ? 'A' : 'a';
  std::string out;
  for (size_t r = 0; r < rows.size(); ++r) {
    if (r > 0) out.push_back('\n');
    out += rows[r];
  }
  return out;
}

double success_rate(const std::vector<uint8_t>& done_flags) {
  if (done_flags.empty()) throw Error(ErrorKind::LengthMismatch, "success_rate: no agents");
  int done = 0;
  for (uint8_t d : done_flags) done += d ? 1 : 0;
  return static_cast<double>(done) / static_cast<double>(done_flags.size());
}

double success_rate(const GridWorld& world) { return success_rate(world.done_flags()); }

std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", rate);
  return buf;
}

std::string format_percent(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", rate * 100.0);
  return buf;
}

}  // namespace abm::env
