#pragma once

#include <string>
#include <vector>

#include "abmapper/scenarios.hpp"
#include "abmapper/training.hpp"

namespace abm::cli {

using KvPairs = std::vector<std::pair<std::string, std::string>>;

// key=value lines, '#' comments, UTF-8. Precedence: scenario bundle defaults
// < file < overrides. Unknown keys are rejected (UnknownKey); malformed
// values raise TypeError naming the key.
train::RunConfig parse_config(const std::string& file_text, const KvPairs& overrides,
                              const ScenarioBundle* bundle);

// One key=value line per field, sorted, floats round-tripping exactly.
std::string config_to_text(const train::RunConfig& config);

}  // namespace abm::cli
