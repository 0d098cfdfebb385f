// Command-line front end: dataset generation, training, evaluation, gradient
// checks, ablation runs and heatmap export.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "lgr/ablation.hpp"
#include "lgr/errors.hpp"
#include "lgr/eval.hpp"
#include "lgr/experiment.hpp"
#include "lgr/gradient_suite.hpp"
#include "lgr/synth.hpp"
#include "lgr/training.hpp"

namespace fs = std::filesystem;
using namespace lgr;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "lgr_out";
  std::vector<std::string> overrides;  // key=value
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = load_experiment(g.config_path);
  std::vector<ConfigEntry> entries;
  for (const std::string& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    entries.push_back({kv.substr(0, eq), kv.substr(eq + 1), 0});
  }
  try {
    apply_options(cfg, entries);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("--set: ") + e.what());
  }
  if (g.seed) {
    cfg.train.seed = *g.seed;
    cfg.synth.seed = *g.seed;
  }
  validate(cfg);
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

/// A split from disk when `data_dir` is set, otherwise generated from the spec.
Dataset obtain_split(const std::string& data_dir, const SynthSpec& spec, const std::string& split) {
  if (!data_dir.empty()) return load_split(data_dir, split);
  return generate_split(spec, build_hierarchy(hierarchy_by_name(spec.hierarchy)), split);
}

void check_compatible(const Model& model, const Dataset& data) {
  if (data.size() == 0) return;
  const Shape want{model.config.input_size, model.config.input_size, 3};
  if (data.images.front().shape() != want) {
    throw ValidationError("dataset images are " + shape_str(data.images.front().shape()) +
                          " but the model expects " + shape_str(want));
  }
  for (const Landmark& lm : data.annotations.front().landmarks) {
    if (!model.graph.find(lm.name)) {
      throw ValidationError("dataset landmark '" + lm.name + "' is not in hierarchy '" + model.config.hierarchy + "'");
    }
  }
}

/// Model from a checkpoint plus the experiment settings it was trained with,
/// the latter adjusted by --seed for regenerated data.
std::pair<Model, ExperimentConfig> load_trained(const std::string& checkpoint, const Globals& g) {
  ExperimentConfig cfg = parse_experiment(read_checkpoint(checkpoint).config_text);
  if (g.seed) cfg.synth.seed = *g.seed;
  return {load_model(checkpoint), cfg};
}

int run_synth(const Globals& g) {
  const ExperimentConfig cfg = load_config(g);
  generate_dataset(cfg.synth, g.out);
  for (const char* split : kSplitNames) {
    std::printf("%s: %zu images -> %s\n", split, split_count(cfg.synth, split), (fs::path(g.out) / split).c_str());
  }
  return kOk;
}

int run_train(const Globals& g, const std::string& data_dir) {
  const ExperimentConfig cfg = load_config(g);
  const Dataset train_set = obtain_split(data_dir, cfg.synth, "train");
  const Dataset val_set = obtain_split(data_dir, cfg.synth, "val");
  ensure_dir(g.out);
  const std::string config_text = experiment_to_text(cfg);
  open_output(fs::path(g.out) / "config.txt") << config_text;
  TrainOutputs outputs;
  outputs.checkpoint_path = (fs::path(g.out) / "checkpoint.lgrc").string();
  outputs.metrics_path = (fs::path(g.out) / "metrics.csv").string();
  outputs.config_text = config_text;
  outputs.on_epoch = [](const EpochMetrics& m) {
    std::printf("epoch %zu  lr %.3g  train_loss %.6f  val_NE %.5f\n", m.epoch, m.lr, m.train_loss, m.val_ne);
    std::fflush(stdout);
  };
  std::printf("training on %zu images, validating on %zu\n", train_set.size(), val_set.size());
  const TrainResult r = train(train_set, val_set, cfg.model, cfg.train, outputs);
  std::printf("best val_NE %.5f at epoch %zu after %zu steps; orthogonality %.3g -> %.3g\n", r.best_val_ne,
              r.best_epoch, r.steps, r.initial_orthogonality, r.best_orthogonality);
  std::printf("checkpoint: %s\nmetrics: %s\n", outputs.checkpoint_path.c_str(), outputs.metrics_path.c_str());
  return kOk;
}

int run_eval(const Globals& g, const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             const std::string& decoder_opt) {
  auto [model, cfg] = load_trained(checkpoint, g);
  const Dataset data = obtain_split(data_dir, cfg.synth, split);
  check_compatible(model, data);
  const Decoder decoder = decoder_opt.empty() ? cfg.train.decoder : parse_decoder(decoder_opt);
  const NEReport report = evaluate(model, data, decoder);
  report.write_table(std::cout);
  ensure_dir(g.out);
  const fs::path csv = fs::path(g.out) / ("ne_" + split + ".csv");
  auto out = open_output(csv);
  report.write_csv(out);
  std::printf("report: %s\n", csv.c_str());
  return kOk;
}

int run_gradcheck(const Globals& g, std::size_t seeds, const std::vector<std::string>& ops, double tolerance) {
  std::vector<std::uint64_t> seed_list;
  const std::uint64_t first = g.seed.value_or(1);
  for (std::size_t i = 0; i < seeds; ++i) seed_list.push_back(first + i);
  const auto cases = run_gradient_suite(seed_list, ops);
  bool ok = true;
  std::printf("%-26s %6s %12s %12s %8s %8s\n", "operation", "seed", "max_rel_err", "max_grad", "checked", "skipped");
  for (const GradientCase& c : cases) {
    const bool pass = c.report.worst <= tolerance && c.report.max_abs_grad >= kMinGradient;
    ok = ok && pass;
    std::printf("%-26s %6llu %12.3e %12.3e %8zu %8zu%s\n", c.op.c_str(), static_cast<unsigned long long>(c.seed),
                c.report.worst, c.report.max_abs_grad, c.report.coords_checked, c.report.coords_skipped,
                pass ? "" : "  FAIL");
  }
  std::printf("%s: %zu checks, tolerance %.1e\n", ok ? "all passed" : "FAILED", cases.size(), tolerance);
  return ok ? kOk : kNumeric;
}

int run_ablate(const Globals& g, const std::string& plan_path, bool fresh) {
  AblationPlan plan = load_ablation_plan(plan_path);
  // Global --config and --set apply before each configuration's own overrides.
  if (!g.config_path.empty()) {
    std::vector<ConfigEntry> base = parse_config(read_text_file(g.config_path));
    base.insert(base.end(), plan.shared.begin(), plan.shared.end());
    plan.shared = std::move(base);
  }
  for (const std::string& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    plan.shared.push_back({kv.substr(0, eq), kv.substr(eq + 1), 0});
  }
  if (g.seed) plan.seeds = {*g.seed};
  ensure_dir(g.out);
  AblationOptions opts;
  opts.journal_path = (fs::path(g.out) / "ablation_journal.csv").string();
  if (fresh) fs::remove(opts.journal_path);
  opts.on_epoch = [](const std::string& config, std::uint64_t seed, const EpochMetrics& m) {
    std::printf("  [%s seed %llu] epoch %zu val_NE %.5f\n", config.c_str(), static_cast<unsigned long long>(seed),
                m.epoch, m.val_ne);
    std::fflush(stdout);
  };
  opts.on_row = [](const AblationRow& r) {
    if (r.ok()) {
      std::printf("%s seed %llu: avg NE %.5f (%.1f s)\n", r.config.c_str(), static_cast<unsigned long long>(r.seed),
                  r.avg_ne, r.wall_time_s);
    } else {
      std::printf("%s seed %llu: %s\n", r.config.c_str(), static_cast<unsigned long long>(r.seed), r.status.c_str());
    }
    std::fflush(stdout);
  };
  const auto rows = run_ablation(plan, opts);
  const fs::path table = fs::path(g.out) / "ablation.csv";
  auto out = open_output(table);
  write_ablation_table(rows, out);
  std::printf("results: %s\n", table.c_str());
  // Failed rows do not stop the run, but the exit code reports the first one's category.
  for (const AblationRow& r : rows) {
    if (r.ok()) continue;
    if (r.status.rfind("config:", 0) == 0) return kConfig;
    if (r.status.rfind("data:", 0) == 0) return kData;
    if (r.status.rfind("numeric:", 0) == 0) return kNumeric;
    return kOther;
  }
  return kOk;
}

int run_export(const Globals& g, const std::string& checkpoint, const std::string& data_dir, const std::string& split,
               std::size_t count, std::size_t overlay_scale) {
  auto [model, cfg] = load_trained(checkpoint, g);
  const Dataset data = obtain_split(data_dir, cfg.synth, split);
  check_compatible(model, data);
  const std::size_t n = std::min(count, data.size());
  const std::vector<Tensor> images(data.images.begin(), data.images.begin() + static_cast<std::ptrdiff_t>(n));
  const std::vector<Tensor> heat = predict_heatmaps(model, images, 16);
  for (std::size_t i = 0; i < n; ++i) {
    export_heatmaps(images[i], heat[i], model.graph.leaf_names(), g.out, data.annotations[i].id, overlay_scale);
  }
  std::printf("exported %zu image sets to %s\n", n, g.out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layout-graph reasoning landmark detector"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "Experiment config file (key = value lines)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for data generation and training");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--set", g.overrides, "Override one config option, key=value (repeatable)");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic train/val/test dataset under --out");

  std::string data_dir;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint, metrics and config to --out");
  train_cmd->add_option("--data", data_dir, "Dataset directory from `synth` (default: generate in memory)");

  std::string checkpoint, split = "test", decoder;
  auto* eval_cmd = app.add_subcommand("eval", "Normalized error of a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data_dir, "Dataset directory (default: regenerate from the checkpoint config)");
  eval_cmd->add_option("--split", split, "train, val or test")->capture_default_str();
  eval_cmd->add_option("--decoder", decoder, "argmax or refined (default: the checkpoint's setting)");

  std::size_t seeds = 5;
  std::vector<std::string> ops;
  double tolerance = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  grad_cmd->add_option("--seeds", seeds, "Number of seeds, starting at --seed (default 1)")->capture_default_str();
  grad_cmd->add_option("--op", ops, "Restrict to these operations (repeatable)");
  grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();
  grad_cmd->add_flag_callback(
      "--list",
      [] {
        for (const std::string& op : gradient_suite_ops()) std::printf("%s\n", op.c_str());
        throw CLI::Success();
      },
      "List operation names and exit");

  std::string plan_path;
  bool fresh = false;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation plan; resumable through a journal in --out");
  ablate_cmd->add_option("--plan", plan_path, "Plan file")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_flag("--fresh", fresh, "Discard the journal and rerun every cell");

  std::size_t count = 4, overlay_scale = 4;
  auto* export_cmd = app.add_subcommand("export", "Write per-landmark heatmap PNGs and overlays to --out");
  export_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--data", data_dir, "Dataset directory (default: regenerate from the checkpoint config)");
  export_cmd->add_option("--split", split, "train, val or test")->capture_default_str();
  export_cmd->add_option("--count", count, "Number of images")->capture_default_str();
  export_cmd->add_option("--overlay-scale", overlay_scale, "Overlay magnification")->capture_default_str();

  for (CLI::App* sub : {synth, train_cmd, eval_cmd, grad_cmd, ablate_cmd, export_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (*synth) return run_synth(g);
    if (*train_cmd) return run_train(g, data_dir);
    if (*eval_cmd) return run_eval(g, checkpoint, data_dir, split, decoder);
    if (*grad_cmd) return run_gradcheck(g, seeds, ops, tolerance);
    if (*ablate_cmd) return run_ablate(g, plan_path, fresh);
    if (*export_cmd) return run_export(g, checkpoint, data_dir, split, count, overlay_scale);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const IoError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOther;
}
