#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lgr/autograd.hpp"
#include "lgr/layout_graph.hpp"
#include "lgr/lgr_layer.hpp"

namespace lgr {

struct ModelConfig {
  std::size_t input_size = 64;
  std::vector<std::size_t> channel_plan{16, 32, 64};  // one stride-2 block per entry
  std::size_t convs_per_block = 2;  // the first conv of a block has stride 2
  std::size_t node_dim = 32;
  std::size_t num_stacks = 4;
  std::size_t clustering_depth = 3;
  std::size_t plain_layers = 2;
  std::string hierarchy = "fld8";
  SoftmaxAxis softmax_axis = SoftmaxAxis::nodes;
  bool tie_deconv = false;
  bool regen_down_adjacency = false;
  std::size_t reason_per_level = 1;
  bool hierarchy_mask = true;
  double lambda_orth = 1e-3;
  bool pyramid_enabled = true;
  bool residual_after_pyramid = false;
  std::size_t inject_after_block = 3;  // 1-based block index feeding the LGR stacks

  std::size_t feature_size() const;  // input_size / 2^blocks
  std::size_t lgr_channels() const;  // channels at the injection point
  LgrConfig lgr_config() const;
};

/// Throws ConfigError when the config is inconsistent with itself or the graph.
void validate(const ModelConfig& cfg, const LayoutGraph& graph);

/// Applies one key = value option; returns false for keys it does not own.
bool set_model_option(ModelConfig& cfg, const std::string& key, const std::string& value);
void write_model_options(const ModelConfig& cfg, std::ostream& os);

template <class T>
struct ConvWeights {
  T kernel;  // [k*k*Cin x Cout]
  T bias;    // [Cout]
};

template <class T>
struct ModelWeights {
  std::vector<ConvWeights<T>> backbone;  // blocks * convs_per_block, in order
  std::vector<LgrWeights<T>> stacks;
  std::vector<ConvWeights<T>> pyramid;  // one 1x1 conv per stack when enabled
  ConvWeights<T> head;                  // 1x1 conv to one channel per leaf
};

using ModelParams = ModelWeights<Tensor>;
using ModelVars = ModelWeights<Var>;

namespace detail {
template <class W, class F>
void visit_model_weights(W& w, F&& f) {
  for (std::size_t i = 0; i < w.backbone.size(); ++i) {
    f("backbone" + std::to_string(i) + ".w", w.backbone[i].kernel);
    f("backbone" + std::to_string(i) + ".b", w.backbone[i].bias);
  }
  for (std::size_t s = 0; s < w.stacks.size(); ++s) {
    const std::string prefix = "stack" + std::to_string(s) + ".";
    for_each_weight(w.stacks[s], [&](const std::string& name, auto& t) { f(prefix + name, t); });
  }
  for (std::size_t s = 0; s < w.pyramid.size(); ++s) {
    f("pyramid" + std::to_string(s) + ".w", w.pyramid[s].kernel);
    f("pyramid" + std::to_string(s) + ".b", w.pyramid[s].bias);
  }
  f(std::string("head.w"), w.head.kernel);
  f(std::string("head.b"), w.head.bias);
}
}  // namespace detail

/// Visits every weight with a stable name ("backbone0.w", "stack1.up0.adj", ...).
template <class T, class F>
void for_each_weight(ModelWeights<T>& w, F&& f) {
  detail::visit_model_weights(w, f);
}
template <class T, class F>
void for_each_weight(const ModelWeights<T>& w, F&& f) {
  detail::visit_model_weights(w, f);
}

ModelParams init_params(const ModelConfig& cfg, const LayoutGraph& graph, std::uint64_t seed);
ModelVars bind(Tape& tape, const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

/// Runs backbone blocks [first, last) on NHWC input.
Var backbone_forward(const Var& x, const ModelVars& w, const ModelConfig& cfg, std::size_t first, std::size_t last);
/// Full backbone on [B x S x S x 3] images with values in [0, 1].
Var backbone_forward(const Var& images, const ModelVars& w, const ModelConfig& cfg);

/// relu(F + conv1x1(upsample(avgpool2(F)))) on [B x H x W x C]; F when disabled.
Var pyramid_post(const Var& features, const ConvWeights<Var>& w, bool enabled);

/// [B x S x S x 3] images -> [B x h x w x N_leaf] heatmaps in (0, 1).
Var model_forward(const Var& images, const LayoutGraph& graph, const ModelVars& w, const ModelConfig& cfg);

/// Sum of the orthogonality penalties of every stack.
Var orthogonality_total(const ModelVars& w, const LayoutGraph& graph, const ModelConfig& cfg);

/// A configured model: hierarchy, config and parameters.
struct Model {
  ModelConfig config;
  LayoutGraph graph;
  ModelParams params;

  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, ModelParams params);
  /// Inference without recording gradients.
  Tensor predict(const Tensor& images) const;
};

}  // namespace lgr
