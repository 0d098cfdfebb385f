#include "lgr/experiment.hpp"

#include <sstream>

#include "lgr/errors.hpp"

namespace lgr {

void apply_options(ExperimentConfig& cfg, const std::vector<ConfigEntry>& entries) {
  for (const ConfigEntry& e : entries) {
    try {
      bool used = set_model_option(cfg.model, e.key, e.value);
      used = set_train_option(cfg.train, e.key, e.value) || used;
      used = set_synth_option(cfg.synth, e.key, e.value) || used;
      if (!used) throw ConfigError("unknown key '" + e.key + "'");
    } catch (const ConfigError& err) {
      if (e.line == 0) throw;  // not from a file, nothing to locate
      throw ConfigError("config line " + std::to_string(e.line) + ": " + err.what());
    }
  }
}

ExperimentConfig parse_experiment(const std::string& text) {
  ExperimentConfig cfg;
  apply_options(cfg, parse_config(text));
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  try {
    return parse_experiment(read_text_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string experiment_to_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "# model\n";
  write_model_options(cfg.model, os);
  os << "# training\n";
  write_train_options(cfg.train, os);
  os << "# synthetic data\n";
  std::ostringstream synth;
  write_synth_options(cfg.synth, synth);
  // The hierarchy line is already emitted with the model options.
  std::istringstream lines(synth.str());
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("hierarchy =", 0) != 0) os << line << "\n";
  }
  return os.str();
}

void validate(const ExperimentConfig& cfg) {
  const LayoutGraph graph = build_hierarchy(hierarchy_by_name(cfg.model.hierarchy));
  validate(cfg.model, graph);
  validate(cfg.train);
  validate(cfg.synth);
  if (cfg.synth.image_size != cfg.model.input_size) {
    throw ConfigError("image_size " + std::to_string(cfg.synth.image_size) + " differs from input_size " +
                      std::to_string(cfg.model.input_size));
  }
}

Model load_model(const std::string& checkpoint_path) {
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  ExperimentConfig cfg;
  try {
    cfg = parse_experiment(ckpt.config_text);
  } catch (const ConfigError& e) {
    throw ConfigError(checkpoint_path + ": bad config snapshot: " + e.what());
  }
  const LayoutGraph graph = build_hierarchy(hierarchy_by_name(cfg.model.hierarchy));
  return Model(cfg.model, params_from_checkpoint(ckpt, cfg.model, graph));
}

}  // namespace lgr
