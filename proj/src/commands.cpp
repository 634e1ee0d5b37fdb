#include "abmapper/commands.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "abmapper/models.hpp"

namespace abm::cli {

using nn::Tensor;

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingCheckpoint, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Loads the run config stored next to a checkpoint, resolving the map path
// against the artifact directory when needed.
std::pair<train::RunConfig, env::GridMap> load_run_context(const std::string& checkpoint_base) {
  const fs::path dir = fs::path(checkpoint_base).parent_path();
  const fs::path snapshot = dir / "config.snapshot";
  if (!fs::exists(snapshot))
    throw Error(ErrorKind::MissingCheckpoint, "missing " + snapshot.string());
  train::RunConfig config = parse_config(read_file(snapshot.string()), {}, nullptr);
  fs::path map_path = config.map_path;
  if (!fs::exists(map_path)) map_path = dir / "map.txt";
  if (!fs::exists(map_path))
    throw Error(ErrorKind::MissingCheckpoint, "missing map file for " + checkpoint_base);
  return {config, env::load_map(read_file(map_path.string()))};
}

}  // namespace

env::GridMap resolve_map(const train::RunConfig& config) {
  if (!config.map_path.empty()) return env::load_map(read_file(config.map_path));
  if (!config.scenario.empty()) {
    const ScenarioBundle* bundle = find_scenario(config.scenario);
    if (bundle == nullptr)
      throw Error(ErrorKind::UnknownKey, "unknown scenario: " + config.scenario);
    return scenario_map(*bundle);
  }
  throw Error(ErrorKind::UnknownKey, "config needs either map= or scenario=");
}

train::TrainResult cmd_train(train::RunConfig config, const std::string& out_dir,
                             std::ostream* console) {
  env::GridMap map = resolve_map(config);
  fs::create_directories(out_dir);
  {
    std::ofstream mf(fs::path(out_dir) / "map.txt", std::ios::binary);
    mf << env::render_map(map);
  }
  config.map_path = (fs::path(out_dir) / "map.txt").string();
  {
    std::ofstream cf(fs::path(out_dir) / "config.snapshot", std::ios::binary);
    cf << config_to_text(config);
  }
  train::Trainer trainer(config, map, out_dir);
  return trainer.run(console);
}

int cmd_eval(const std::string& checkpoint_base, int episodes, std::ostream& out) {
  out << "episodes,success_mean,success_std,mean_steps,mean_reward\n";
  if (episodes == 0) return 0;
  auto [config, map] = load_run_context(checkpoint_base);
  train::Learner learner = train::load_checkpoint(checkpoint_base);
  train::EvalStats stats = train::evaluate(learner, map, config, episodes,
                                           derive_seed(config.seed, 0xCE11));
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.3f,%.6f\n", episodes, stats.success_mean,
                stats.success_std, stats.mean_steps, stats.mean_reward);
  out << buf;
  return 0;
}

int cmd_render(const std::string& checkpoint_base, uint64_t seed, const std::string& out_path) {
  auto [config, map] = load_run_context(checkpoint_base);
  train::Learner learner = train::load_checkpoint(checkpoint_base);
  env::GridWorld world(map, config.n_agents, config.n_dyn, config.init_mode, seed,
                       config.reward_config(), config.max_steps);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingCheckpoint, "cannot write " + out_path);
  out << world.render_frame();
  Rng rng(derive_seed(seed, 0x4E4D));
  const int n = world.num_agents();
  while (!world.all_done() && world.steps_taken() < world.max_steps()) {
    Tensor obs({n, env::Observation::kChannels * env::Observation::kFov * env::Observation::kFov});
    for (int i = 0; i < n; ++i) {
      env::Observation o = world.observe(i);
      std::copy(o.data.begin(), o.data.end(),
                obs.data.begin() + static_cast<long>(i) * static_cast<long>(o.data.size()));
    }
    Tensor probs = learner.per_agent()
                       ? Tensor()
                       : learner.sets[0]->actor->forward(obs, 1, n, nullptr);
    std::vector<env::Action> actions(static_cast<size_t>(n), env::Action::Stay);
    for (int i = 0; i < n; ++i) {
      if (world.agent(i).done) continue;
      int best = 0;
      if (learner.per_agent()) {
        Tensor row({1, obs.dim(1)});
        std::copy(obs.data.begin() + static_cast<long>(i) * obs.dim(1),
                  obs.data.begin() + static_cast<long>(i + 1) * obs.dim(1), row.data.begin());
        Tensor p = learner.sets[static_cast<size_t>(i)]->actor->forward(row, 1, 1, nullptr);
        for (int a = 1; a < p.dim(1); ++a)
          if (p.at(0, a) > p.at(0, best)) best = a;
      } else {
        for (int a = 1; a < probs.dim(1); ++a)
          if (probs.at(i, a) > probs.at(i, best)) best = a;
      }
      actions[static_cast<size_t>(i)] = static_cast<env::Action>(best);
    }
    world.step(actions);
    out << "\n\n" << world.render_frame();
  }
  (void)rng;
  return 0;
}

int cmd_gradcheck(std::ostream& out, int trials) {
  nn::GradCheckReport report =
      nn::run_layer_gradchecks(trials, 1e-3f, 1e-3, /*seed=*/20240817, &out);
  models::run_network_gradchecks(trials, 1e-3f, 1e-3, /*seed=*/20240818, &report, &out);
  const bool ok = report.all_pass();
  out << (ok ? "gradcheck: all blocks pass\n" : "gradcheck: FAILURES present\n");
  return ok ? 0 : 1;
}

}  // namespace abm::cli
