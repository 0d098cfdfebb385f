#pragma once

#include <string>
#include <vector>

#include "lgr/config.hpp"
#include "lgr/model.hpp"
#include "lgr/synth.hpp"
#include "lgr/training.hpp"

namespace lgr {

/// Model, training and data options read from one key = value file. Keys are
/// shared only where the value must agree (hierarchy).
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  SynthSpec synth;
};

/// Applies entries in order; unknown keys raise ConfigError naming the line.
void apply_options(ExperimentConfig& cfg, const std::vector<ConfigEntry>& entries);
ExperimentConfig parse_experiment(const std::string& text);
ExperimentConfig load_experiment(const std::string& path);
/// Canonical text: every option, one per line, in a fixed order.
std::string experiment_to_text(const ExperimentConfig& cfg);
/// Cross-checks the parts against each other and the hierarchy.
void validate(const ExperimentConfig& cfg);

/// The model stored in a checkpoint, configured from its config snapshot.
Model load_model(const std::string& checkpoint_path);

}  // namespace lgr
