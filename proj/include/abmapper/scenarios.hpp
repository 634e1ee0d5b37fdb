#pragma once

#include <optional>
#include <string>
#include <vector>

#include "abmapper/grid_map.hpp"
#include "abmapper/training.hpp"

namespace abm::cli {

/// One packaged experiment environment: map geometry recipe plus the
/// per-environment defaults (agent count, dynamic obstacles, z).
struct ScenarioBundle {
  std::string name;
  int width = 0, height = 0;
  int n_agents = 0, n_dyn = 30;
  int z = 1;
  env::InitMode init_mode = env::InitMode::Uniform;
  uint64_t map_seed = 0;
  double static_density = 0.15;
};

// The four full-scale environments (I, II, III, non) plus desk-scale
// mini variants (mini-I .. mini-non): half dimensions per axis, quarter
// agent count, 8 dynamic obstacles, z halved (rounded up).
const std::vector<ScenarioBundle>& scenarios();
const ScenarioBundle* find_scenario(const std::string& name);

// Rooms-and-corridors obstacle pattern at the requested static density:
// wall lines every few cells with door gaps per segment, thinned to the
// target density. Free space is connected by construction. Deterministic in
// (width, height, density, seed).
env::GridMap generate_room_map(int width, int height, double density, uint64_t seed);

env::GridMap scenario_map(const ScenarioBundle& bundle);
train::RunConfig scenario_defaults(const ScenarioBundle& bundle);

}  // namespace abm::cli
