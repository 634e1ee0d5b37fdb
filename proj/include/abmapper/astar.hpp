#pragma once

#include <optional>
#include <vector>

#include "abmapper/grid_map.hpp"

namespace abm::plan {

using env::Action;
using env::GridMap;
using env::Pos;

/// 4-connected path; consecutive cells adjacent, first = start, last = goal.
struct Path {
  std::vector<Pos> cells;
  int moves() const { return static_cast<int>(cells.size()) - 1; }
  bool contains(Pos p) const {
    for (Pos c : cells)
      if (c == p) return true;
    return false;
  }
};

// Shortest 4-connected path over static obstacles, Manhattan heuristic,
// neighbor expansion order Up, Down, Left, Right, FIFO among equal f.
// nullopt when the goal is unreachable.
std::optional<Path> astar(const GridMap& map, Pos start, Pos goal);

// Same, treating `blocked` cells (bitmap of map.cell_count()) as temporary
// obstacles. The start cell is exempt.
std::optional<Path> astar_avoiding(const GridMap& map, Pos start, Pos goal,
                                   const std::vector<uint8_t>& blocked);

// Static-map shortest path used for the deviation penalty; computed once at
// episode reset.
inline std::optional<Path> reference_path(const GridMap& map, Pos start, Pos goal) {
  return astar(map, start, goal);
}

/// Roaming obstacle driven by local-repair A*: replans only when the next
/// plan cell is currently occupied; redraws a random goal on arrival.
struct LraAgent {
  Pos pos, goal;
  std::vector<Pos> plan;  // plan[0] == pos when non-empty
};

// One step of local-repair A*. `occupied` is a bitmap of cells taken by other
// entities this instant; `free_list` the map's free cells (for goal redraws).
// Mutates the agent (position, plan, possibly goal) and returns the action
// taken; Stay is the universal fallback.
Action lra_step(const GridMap& map, LraAgent& agent, const std::vector<uint8_t>& occupied,
                const std::vector<Pos>& free_list, Rng& rng);

}  // namespace abm::plan
