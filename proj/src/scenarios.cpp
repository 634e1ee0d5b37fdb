#include "abmapper/scenarios.hpp"

#include <algorithm>

namespace abm::cli {

namespace {

std::vector<ScenarioBundle> make_scenarios() {
  std::vector<ScenarioBundle> out;
  // Table-matched full-scale environments; 30 dynamic obstacles each.
  out.push_back({"I", 31, 25, 35, 30, 3, env::InitMode::Uniform, 11});
  out.push_back({"II", 20, 20, 35, 30, 5, env::InitMode::ClusteredCenter, 12});
  out.push_back({"III", 65, 60, 175, 30, 15, env::InitMode::Uniform, 13});
  out.push_back({"non", 65, 60, 70, 30, 6, env::InitMode::Uniform, 14});
  // Desk-scale variants: half dimensions, quarter agents, 8 dynamic
  // obstacles, z halved rounding up.
  for (size_t i = 0; i < 4; ++i) {
    ScenarioBundle mini = out[i];
    mini.name = "mini-" + mini.name;
    mini.width = (mini.width + 1) / 2;
    mini.height = (mini.height + 1) / 2;
    mini.n_agents = (mini.n_agents + 3) / 4;
    mini.n_dyn = 8;
    mini.z = (mini.z + 1) / 2;
    mini.map_seed += 100;
    out.push_back(mini);
  }
  return out;
}

}  // namespace

const std::vector<ScenarioBundle>& scenarios() {
  static const std::vector<ScenarioBundle> table = make_scenarios();
  return table;
}

const ScenarioBundle* find_scenario(const std::string& name) {
  for (const auto& s : scenarios())
    if (s.name == name) return &s;
  return nullptr;
}

env::GridMap generate_room_map(int width, int height, double density, uint64_t seed) {
  env::GridMap map;
  map.width = width;
  map.height = height;
  map.cells.assign(static_cast<size_t>(width) * height, 0);
  Rng rng(derive_seed(seed, 0x9009));
  const int period = 5;

  auto cell = [&](int r, int c) -> uint8_t& {
    return map.cells[static_cast<size_t>(r) * width + c];
  };

  std::vector<int> wall_rows, wall_cols;
  for (int r = period - 1; r < height - 1; r += period) wall_rows.push_back(r);
  for (int c = period - 1; c < width - 1; c += period) wall_cols.push_back(c);
  for (int r : wall_rows)
    for (int c = 0; c < width; ++c) cell(r, c) = 1;
  for (int c : wall_cols)
    for (int r = 0; r < height; ++r) cell(r, c) = 1;

  // door gaps: one or two per wall segment between intersections
  auto carve_doors = [&](bool horizontal) {
    const auto& lines = horizontal ? wall_rows : wall_cols;
    const auto& cross = horizontal ? wall_cols : wall_rows;
    const int extent = horizontal ? width : height;
    for (int line : lines) {
      std::vector<int> cuts{-1};
      for (int x : cross) cuts.push_back(x);
      cuts.push_back(extent);
      for (size_t s = 0; s + 1 < cuts.size(); ++s) {
        const int lo = cuts[s] + 1, hi = cuts[s + 1];  // [lo, hi)
        if (hi - lo <= 0) continue;
        const int doors = hi - lo >= 6 ? 2 : 1;
        for (int d = 0; d < doors; ++d) {
          const int x = lo + static_cast<int>(rng.next_below(static_cast<uint64_t>(hi - lo)));
          if (horizontal)
            cell(line, x) = 0;
          else
            cell(x, line) = 0;
        }
      }
    }
  };
  carve_doors(true);
  carve_doors(false);

  // thin to the target density
  const long target = static_cast<long>(density * width * height);
  std::vector<int> walls;
  for (int i = 0; i < width * height; ++i)
    if (map.cells[static_cast<size_t>(i)]) walls.push_back(i);
  long count = static_cast<long>(walls.size());
  while (count > target && !walls.empty()) {
    const size_t pick = rng.next_below(walls.size());
    map.cells[static_cast<size_t>(walls[pick])] = 0;
    walls[pick] = walls.back();
    walls.pop_back();
    --count;
  }
  return map;
}

env::GridMap scenario_map(const ScenarioBundle& bundle) {
  return generate_room_map(bundle.width, bundle.height, bundle.static_density, bundle.map_seed);
}

train::RunConfig scenario_defaults(const ScenarioBundle& bundle) {
  train::RunConfig config;
  config.scenario = bundle.name;
  config.n_agents = bundle.n_agents;
  config.n_dyn = bundle.n_dyn;
  config.z = bundle.z;
  config.init_mode = bundle.init_mode;
  return config;
}

}  // namespace abm::cli
