#include "abmapper/config.hpp"

#include <cstdio>
#include <sstream>

namespace abm::cli {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::TypeError, "config key '" + key + "': not an integer: " + value);
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::TypeError, "config key '" + key + "': not an integer: " + value);
  }
}

float parse_float(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    float v = std::stof(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::TypeError, "config key '" + key + "': not a number: " + value);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw Error(ErrorKind::TypeError, "config key '" + key + "': not a boolean: " + value);
}

void apply_kv(train::RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "map") c.map_path = value;
  else if (key == "scenario") c.scenario = value;
  else if (key == "n_agents") c.n_agents = static_cast<int>(parse_int(key, value));
  else if (key == "n_dyn") c.n_dyn = static_cast<int>(parse_int(key, value));
  else if (key == "init_mode") {
    if (value == "Uniform") c.init_mode = env::InitMode::Uniform;
    else if (value == "ClusteredCenter") c.init_mode = env::InitMode::ClusteredCenter;
    else throw Error(ErrorKind::TypeError, "config key 'init_mode': unknown value: " + value);
  } else if (key == "max_steps") c.max_steps = static_cast<int>(parse_int(key, value));
  else if (key == "mode") c.mode = train::parse_mode(value);
  else if (key == "z") c.z = static_cast<int>(parse_int(key, value));
  else if (key == "gamma") c.gamma = parse_float(key, value);
  else if (key == "lambda") c.lambda = parse_float(key, value);
  else if (key == "step_penalty") c.step_penalty = parse_float(key, value);
  else if (key == "goal_reward") c.goal_reward = parse_float(key, value);
  else if (key == "collision_penalty") c.collision_penalty = parse_float(key, value);
  else if (key == "lr_actor") c.lr_actor = parse_float(key, value);
  else if (key == "lr_critic") c.lr_critic = parse_float(key, value);
  else if (key == "tau") c.tau = parse_float(key, value);
  else if (key == "lr_baseline") c.lr_baseline = parse_float(key, value);
  else if (key == "evolution_period") c.evolution_period = static_cast<int>(parse_int(key, value));
  else if (key == "episodes") c.episodes = static_cast<int>(parse_int(key, value));
  else if (key == "eval_every") c.eval_every = static_cast<int>(parse_int(key, value));
  else if (key == "eval_episodes") c.eval_episodes = static_cast<int>(parse_int(key, value));
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "share_critic_encoders") {
    if (value == "auto") c.share_critic_encoders = -1;
    else c.share_critic_encoders = parse_bool(key, value) ? 1 : 0;
  } else if (key == "advantage_baseline") c.advantage_baseline = parse_bool(key, value);
  else throw Error(ErrorKind::UnknownKey, "unknown config key: " + key);
}

void validate(const train::RunConfig& c) {
  if (c.gamma < 0.0f || c.gamma > 1.0f)
    throw Error(ErrorKind::TypeError, "config key 'gamma': must be in [0,1]");
  if (c.lambda < 0.0f) throw Error(ErrorKind::TypeError, "config key 'lambda': must be >= 0");
  if (c.lr_actor <= 0.0f || c.lr_critic <= 0.0f || c.lr_baseline <= 0.0f)
    throw Error(ErrorKind::TypeError, "config: learning rates must be > 0");
  if (c.z < 1) throw Error(ErrorKind::TypeError, "config key 'z': must be >= 1");
  if (c.n_agents < 1) throw Error(ErrorKind::TypeError, "config key 'n_agents': must be >= 1");
}

}  // namespace

train::RunConfig parse_config(const std::string& file_text, const KvPairs& overrides,
                              const ScenarioBundle* bundle) {
  train::RunConfig config = bundle != nullptr ? scenario_defaults(*bundle) : train::RunConfig{};
  std::istringstream in(file_text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::TypeError,
                  "config line " + std::to_string(lineno) + ": expected key=value");
    apply_kv(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& [k, v] : overrides) apply_kv(config, k, v);
  validate(config);
  return config;
}

std::string config_to_text(const train::RunConfig& c) {
  char buf[64];
  auto f = [&](float v) {
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return std::string(buf);
  };
  std::ostringstream out;
  out << "advantage_baseline=" << (c.advantage_baseline ? "true" : "false") << "\n";
  out << "collision_penalty=" << f(c.collision_penalty) << "\n";
  out << "episodes=" << c.episodes << "\n";
  out << "eval_episodes=" << c.eval_episodes << "\n";
  out << "eval_every=" << c.eval_every << "\n";
  out << "evolution_period=" << c.evolution_period << "\n";
  out << "gamma=" << f(c.gamma) << "\n";
  out << "goal_reward=" << f(c.goal_reward) << "\n";
  out << "init_mode="
      << (c.init_mode == env::InitMode::ClusteredCenter ? "ClusteredCenter" : "Uniform") << "\n";
  out << "lambda=" << f(c.lambda) << "\n";
  out << "lr_actor=" << f(c.lr_actor) << "\n";
  out << "lr_baseline=" << f(c.lr_baseline) << "\n";
  out << "lr_critic=" << f(c.lr_critic) << "\n";
  if (!c.map_path.empty()) out << "map=" << c.map_path << "\n";
  out << "max_steps=" << c.max_steps << "\n";
  out << "mode=" << train::mode_name(c.mode) << "\n";
  out << "n_agents=" << c.n_agents << "\n";
  out << "n_dyn=" << c.n_dyn << "\n";
  if (!c.scenario.empty()) out << "scenario=" << c.scenario << "\n";
  out << "seed=" << c.seed << "\n";
  out << "share_critic_encoders="
      << (c.share_critic_encoders < 0 ? std::string("auto")
                                      : std::string(c.share_critic_encoders ? "true" : "false"))
      << "\n";
  out << "step_penalty=" << f(c.step_penalty) << "\n";
  out << "tau=" << f(c.tau) << "\n";
  out << "z=" << c.z << "\n";
  return out.str();
}

}  // namespace abm::cli
