#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "lgr/eval.hpp"
#include "lgr/model.hpp"
#include "lgr/rng.hpp"
#include "lgr/synth.hpp"

namespace lgr {

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr0 = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double drop_factor = 10.0;
  std::size_t drop_every = 20;  // epochs between learning-rate drops
  std::size_t epochs = 30;
  std::size_t max_steps = 0;  // 0: no step limit
  std::size_t patience = 10;  // epochs without validation improvement before stopping
  double target_ne = 0.0;     // stop once validation NE is at or below this; 0 disables
  bool augment = true;
  double aug_scale_min = 0.9, aug_scale_max = 1.1;
  double aug_rotation_deg = 15.0;
  double hflip_prob = 0.5;
  double heatmap_sigma = 1.0;  // in heatmap cells
  Decoder decoder = Decoder::refined;
  std::uint64_t seed = 1;
};

/// Throws ConfigError on non-positive rates or sizes.
void validate(const TrainConfig& cfg);
bool set_train_option(TrainConfig& cfg, const std::string& key, const std::string& value);
void write_train_options(const TrainConfig& cfg, std::ostream& os);

/// lr0 / drop_factor^floor(epoch / drop_every).
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

/// mse(heatmaps, target) + lambda_orth * sum of the stack orthogonality penalties.
Var total_loss(const Var& heatmaps, const Var& target, const ModelVars& w, const LayoutGraph& graph,
               const ModelConfig& cfg);

/// Adam moments for a list of tensors, in the order the tensors are passed.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> m, v;
};

/// One bias-corrected Adam update of every tensor. Throws ContractError when a
/// gradient is missing or does not match its parameter's shape.
void adam_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               const TrainConfig& cfg);

struct Sample {
  Tensor image;  // [S x S x 3]
  std::vector<Landmark> landmarks;
};

/// Scaling and rotation about the image centre, then an optional horizontal flip.
struct AugmentParams {
  double scale = 1.0;
  double angle = 0.0;  // radians
  bool flip = false;
};

AugmentParams sample_augment(Rng& rng, const TrainConfig& cfg);
/// Bilinear resampling of the image with matching landmark transform. A flip also
/// swaps every symmetric pair (mirror[i] is leaf i's partner); landmarks that leave
/// the frame become invisible.
Sample apply_augment(const Sample& s, const AugmentParams& p, const std::vector<std::size_t>& mirror);
Sample augment(const Sample& s, Rng& rng, const TrainConfig& cfg, const std::vector<std::size_t>& mirror);

/// Everything a checkpoint file stores.
struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;  // parameters, then "adam.m/<name>" and "adam.v/<name>"
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const ModelParams& params, const AdamState* adam, const std::string& config_text);
/// Parameters by name into the shapes `cfg` and `graph` require; throws ValidationError on mismatch.
ModelParams params_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg, const LayoutGraph& graph);
/// Rounds every value to the nearest float, the precision checkpoints store.
void round_to_checkpoint_precision(ModelParams& params);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_ne = 0.0;
};

std::string format_metrics_line(const EpochMetrics& m);

struct TrainResult {
  ModelParams best_params;  // at checkpoint precision
  AdamState best_adam;
  std::vector<EpochMetrics> log;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_ne = 0.0;
  std::uint64_t steps = 0;
  double initial_orthogonality = 0.0;
  double best_orthogonality = 0.0;
};

struct TrainOutputs {
  std::string checkpoint_path;  // written whenever validation improves; empty to skip
  std::string metrics_path;     // appended once per epoch; empty to skip
  std::string config_text;      // stored in the checkpoint
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Seeded minibatch Adam on MSE heatmap loss plus the orthogonality term; keeps
/// the parameters with the lowest validation NE and stops after `patience`
/// epochs without improvement or when max_steps is reached.
TrainResult train(const Dataset& train_set, const Dataset& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainOutputs& outputs = {});
TrainResult train(const Dataset& train_set, const Dataset& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, ModelParams init, const TrainOutputs& outputs = {});

/// Sum of the stack orthogonality penalties of concrete parameters.
double orthogonality_value(const ModelParams& params, const LayoutGraph& graph, const ModelConfig& cfg);

/// Stacks [S x S x 3] images and renders matching [h x w x N] targets.
Tensor stack_images(const std::vector<const Tensor*>& images);
Tensor target_heatmaps(const std::vector<const std::vector<Landmark>*>& landmarks, std::size_t size, double sigma);

}  // namespace lgr
