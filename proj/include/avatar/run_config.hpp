#pragma once
// Fully resolved settings of a command-line run. Every parameter has a dotted
// key ("guidance.scale", "model.codec.resolution", ...) that config files and
// --set flags can override.
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "avatar/dataset.hpp"
#include "avatar/sampling.hpp"
#include "avatar/training.hpp"

namespace avatar {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct RunSettings {
  std::uint64_t seed = 7;
  int ae_steps = 200;
  int ldm_steps = 1500;
  int ldm_epochs = 0;  // when > 0, overrides ldm_steps
  int log_every = 10;
  int samples = 4;
  int eval_targets = 32;  // held-out targets for eval and sweep; 0 means all
  double holdout_fraction = 0.5;
};

struct RunConfig {
  std::string preset = "toy";
  ModelConfig model;
  DatasetConfig dataset;
  AeTrainConfig ae;
  LdmTrainConfig ldm;
  GuidanceConfig guidance;
  RunSettings run;

  static RunConfig toy();
  static RunConfig paper();
  /// Throws ConfigError for an unknown preset.
  static RunConfig from_preset(const std::string& name);

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  /// key -> value text for every parameter (the preset name is not one).
  std::map<std::string, std::string> flatten() const;
  /// Overrides by dotted key. Unknown keys, malformed values and settings that
  /// fail validation throw ConfigError.
  void apply(const std::map<std::string, std::string>& overrides);
  void validate() const;

  /// LDM optimizer steps for a training set of n items.
  int ldm_step_count(int n_train) const;
};

/// key=value lines; blank lines and '#' comments are skipped. A repeated key
/// or a line without '=' throws ConfigError.
std::map<std::string, std::string> parse_overrides(const std::string& text);

}  // namespace avatar
