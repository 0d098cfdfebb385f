#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lgr/config.hpp"
#include "lgr/experiment.hpp"

namespace lgr {

/// One named configuration of an ablation plan: option overrides applied on
/// top of the plan's shared options.
struct AblationVariant {
  std::string name;
  int line = 0;
  std::vector<ConfigEntry> overrides;
};

/// Plan file layout: shared "key = value" options and a `seeds` list before the
/// first section, then one "[name]" section per configuration.
struct AblationPlan {
  std::vector<ConfigEntry> shared;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationVariant> variants;
};

AblationPlan parse_ablation_plan(const std::string& text);
AblationPlan load_ablation_plan(const std::string& path);

/// The experiment for one (variant, seed) cell. The seed drives both data
/// generation and training so every variant of a seed sees the same images.
ExperimentConfig ablation_experiment(const AblationPlan& plan, const AblationVariant& variant, std::uint64_t seed);

struct AblationRow {
  std::string config;
  std::uint64_t seed = 0;
  std::string fingerprint;  // hash of the canonical experiment text; empty if invalid
  std::string status;       // "ok", or "<category>: <message>"
  double avg_ne = 0;
  double clean_ne = 0;       // validation images without a distractor
  double distractor_ne = 0;  // validation images with a distractor
  std::size_t best_epoch = 0;
  double initial_orthogonality = 0;
  double best_orthogonality = 0;
  double wall_time_s = 0;

  bool ok() const { return status == "ok"; }
};

/// CSV header and rows used both for the results table and the journal.
std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);
AblationRow parse_ablation_csv_row(const std::string& line);
void write_ablation_table(const std::vector<AblationRow>& rows, std::ostream& os);

/// 64-bit FNV-1a of the canonical experiment text, as 16 hex digits.
std::string experiment_fingerprint(const ExperimentConfig& cfg);

struct AblationOptions {
  std::string journal_path;  // completed rows are appended here; empty disables resuming
  std::function<void(const AblationRow&)> on_row;
  std::function<void(const std::string& config, std::uint64_t seed, const EpochMetrics&)> on_epoch;
};

/// Trains and evaluates every (variant, seed) cell, seed-major. Cells already
/// in the journal with a matching fingerprint are reused rather than rerun.
/// Invalid configurations and numeric failures become rows with a non-ok
/// status and the run continues.
std::vector<AblationRow> run_ablation(const AblationPlan& plan, const AblationOptions& options = {});

/// Rows of one configuration, in plan seed order; missing cells are skipped.
std::vector<AblationRow> rows_for(const std::vector<AblationRow>& rows, const std::string& config);

}  // namespace lgr
