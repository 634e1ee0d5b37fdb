#include "abmapper/astar.hpp"

#include <algorithm>
#include <queue>

namespace abm::plan {

namespace {

struct OpenNode {
  int f;
  long seq;  // FIFO tie-break; children pushed in Up,Down,Left,Right order
  int cell;
};
struct OpenCmp {
  bool operator()(const OpenNode& a, const OpenNode& b) const {
    if (a.f != b.f) return a.f > b.f;
    return a.seq > b.seq;
  }
};

constexpr int kNoPrev = -2;

std::optional<Path> astar_impl(const GridMap& map, Pos start, Pos goal,
                               const std::vector<uint8_t>* blocked) {
  if (!map.free_cell(start) || !map.free_cell(goal)) return std::nullopt;
  if (blocked != nullptr && (*blocked)[static_cast<size_t>(map.index(goal))] &&
      !(goal == start))
    return std::nullopt;
  const int n = map.cell_count();
  std::vector<int> g(static_cast<size_t>(n), -1);
  std::vector<int> prev(static_cast<size_t>(n), kNoPrev);
  std::priority_queue<OpenNode, std::vector<OpenNode>, OpenCmp> open;
  long seq = 0;
  const int start_idx = map.index(start), goal_idx = map.index(goal);
  g[static_cast<size_t>(start_idx)] = 0;
  prev[static_cast<size_t>(start_idx)] = -1;
  open.push({manhattan(start, goal), seq++, start_idx});
  const Action order[4] = {Action::Up, Action::Down, Action::Left, Action::Right};
  std::vector<uint8_t> closed(static_cast<size_t>(n), 0);
  while (!open.empty()) {
    OpenNode node = open.top();
    open.pop();
    if (closed[static_cast<size_t>(node.cell)]) continue;
    closed[static_cast<size_t>(node.cell)] = 1;
    if (node.cell == goal_idx) break;
    const Pos cur{node.cell / map.width, node.cell % map.width};
    const int gc = g[static_cast<size_t>(node.cell)];
    for (Action a : order) {
      const Pos nb = apply_action(cur, a);
      if (!map.free_cell(nb)) continue;
      const int ni = map.index(nb);
      if (blocked != nullptr && (*blocked)[static_cast<size_t>(ni)]) continue;
      if (g[static_cast<size_t>(ni)] != -1 && g[static_cast<size_t>(ni)] <= gc + 1) continue;
      g[static_cast<size_t>(ni)] = gc + 1;
      prev[static_cast<size_t>(ni)] = node.cell;
      open.push({gc + 1 + manhattan(nb, goal), seq++, ni});
    }
  }
  if (prev[static_cast<size_t>(goal_idx)] == kNoPrev) return std::nullopt;
  Path path;
  for (int c = goal_idx; c != -1; c = prev[static_cast<size_t>(c)])
    path.cells.push_back({c / map.width, c % map.width});
  std::reverse(path.cells.begin(), path.cells.end());
  return path;
}

}  // namespace

std::optional<Path> astar(const GridMap& map, Pos start, Pos goal) {
  return astar_impl(map, start, goal, nullptr);
}

std::optional<Path> astar_avoiding(const GridMap& map, Pos start, Pos goal,
                                   const std::vector<uint8_t>& blocked) {
  return astar_impl(map, start, goal, &blocked);
}

Action lra_step(const GridMap& map, LraAgent& agent, const std::vector<uint8_t>& occupied,
                const std::vector<Pos>& free_list, Rng& rng) {
  if (agent.pos == agent.goal) {
    // Roam forever: new random free goal, excluding the current cell.
    if (free_list.size() > 1) {
      Pos g;
      do {
        g = free_list[rng.next_below(free_list.size())];
      } while (g == agent.pos);
      agent.goal = g;
    }
    agent.plan.clear();
  }
  const bool next_blocked =
      agent.plan.size() >= 2 && occupied[static_cast<size_t>(map.index(agent.plan[1]))];
  if (agent.plan.size() < 2 || next_blocked) {
    auto replanned = astar_avoiding(map, agent.pos, agent.goal, occupied);
    if (!replanned.has_value() || replanned->cells.size() < 2) {
      agent.plan.clear();
      return Action::Stay;
    }
    agent.plan = std::move(replanned->cells);
  }
  const Pos next = agent.plan[1];
  Action act = Action::Stay;
  if (next.row == agent.pos.row - 1) act = Action::Up;
  else if (next.row == agent.pos.row + 1) act = Action::Down;
  else if (next.col == agent.pos.col - 1) act = Action::Left;
  else if (next.col == agent.pos.col + 1) act = Action::Right;
  agent.pos = next;
  agent.plan.erase(agent.plan.begin());
  return act;
}

}  // namespace abm::plan
