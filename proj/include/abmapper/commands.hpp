#pragma once

#include <iosfwd>
#include <string>

#include "abmapper/config.hpp"
#include "abmapper/training.hpp"

namespace abm::cli {

// Resolves the run's map: explicit map file when set, else the scenario
// bundle's generated map. Throws when neither is available.
env::GridMap resolve_map(const train::RunConfig& config);

// Runs a full training; writes the artifact directory (config.snapshot,
// map.txt, metrics.csv, eval.csv, checkpoints, train.log).
train::TrainResult cmd_train(train::RunConfig config, const std::string& out_dir,
                             std::ostream* console);

// Greedy evaluation of a checkpoint. Prints one CSV header plus one row per
// call (none when episodes == 0). Returns process exit code.
int cmd_eval(const std::string& checkpoint_base, int episodes, std::ostream& out);

// Writes the episode trace (one frame per step, blank-line separated) for a
// greedy rollout of the checkpoint on its recorded scenario.
int cmd_render(const std::string& checkpoint_base, uint64_t seed, const std::string& out_path);

// Full gradient-integrity suite: every layer plus both end-to-end networks.
// Returns 0 only when every block passes.
int cmd_gradcheck(std::ostream& out, int trials = 50);

}  // namespace abm::cli
