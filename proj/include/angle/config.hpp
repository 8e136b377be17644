#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "angle/encoder.hpp"
#include "angle/objectives.hpp"
#include "angle/trainer.hpp"

namespace angle {

using Json = nlohmann::json;

Json to_json(const EncoderConfig& cfg);
Json to_json(const LossConfig& cfg);
Json to_json(const TrainConfig& cfg);

EncoderConfig encoder_config_from_json(const Json& j);
LossConfig loss_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);

// Everything a run needs besides file paths, which stay on the command line.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
};

Json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const Json& j);

// Recursively overlay patch onto base. Keys missing from base are rejected so
// a typo fails loudly instead of silently running with defaults.
void merge_config(Json& base, const Json& patch, const std::string& prefix = "");

// Apply one "path.to.key=value" override to an existing config tree. The
// dotted path must already exist; the value is parsed as JSON when possible
// and treated as a bare string otherwise.
void apply_override(Json& config, const std::string& assignment);

// Defaults, overlaid with an optional JSON file, then --set overrides,
// in that order. Empty config_path skips the file stage.
RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides);

}  // namespace angle
