#include "lgr/model.hpp"

#include <cmath>
#include <ostream>

#include "lgr/config.hpp"
#include "lgr/errors.hpp"
#include "lgr/ops.hpp"
#include "lgr/rng.hpp"

namespace lgr {
namespace {

constexpr std::size_t kKernel = 3;
// Head bias starts well below zero so initial heatmaps sit near the mostly
// empty targets instead of at 0.5.
constexpr double kHeadBiasInit = -4.0;

void fill_uniform(Tensor& t, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(t.dim(0)));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

ConvWeights<Tensor> conv_params(std::size_t fan_in, std::size_t cout, Rng& rng) {
  ConvWeights<Tensor> c{Tensor({fan_in, cout}), Tensor({cout})};
  fill_uniform(c.kernel, rng);
  c.kernel.set_requires_grad(true);
  c.bias.set_requires_grad(true);
  return c;
}

std::size_t num_blocks(const ModelConfig& cfg) { return cfg.channel_plan.size(); }

Var lgr_stack(const Var& f, const LayoutGraph& graph, const LgrVars& w, const LgrConfig& lcfg) {
  const std::size_t B = f.dim(0), H = f.dim(1), W = f.dim(2), C = f.dim(3);
  Var flat = ops::reshape(f, {B, H * W, C});
  return ops::reshape(lgr_forward(flat, graph, w, lcfg), {B, H, W, C});
}

}  // namespace

std::size_t ModelConfig::feature_size() const { return input_size >> channel_plan.size(); }

std::size_t ModelConfig::lgr_channels() const {
  if (inject_after_block == 0 || inject_after_block > channel_plan.size()) return 0;
  return channel_plan[inject_after_block - 1];
}

LgrConfig ModelConfig::lgr_config() const {
  LgrConfig c;
  c.channels = lgr_channels();
  c.node_dim = node_dim;
  c.clustering_depth = clustering_depth;
  c.plain_layers = plain_layers;
  c.softmax_axis = softmax_axis;
  c.tie_deconv = tie_deconv;
  c.regen_down_adjacency = regen_down_adjacency;
  c.reason_per_level = reason_per_level;
  c.hierarchy_mask = hierarchy_mask;
  return c;
}

void validate(const ModelConfig& cfg, const LayoutGraph& graph) {
  if (cfg.channel_plan.empty()) throw ConfigError("channel_plan must list at least one block");
  for (std::size_t c : cfg.channel_plan)
    if (c == 0) throw ConfigError("channel_plan entries must be positive");
  if (cfg.convs_per_block == 0) throw ConfigError("convs_per_block must be at least 1");
  const std::size_t div = std::size_t{1} << cfg.channel_plan.size();
  if (cfg.input_size == 0 || cfg.input_size % div != 0) {
    throw ConfigError("input_size " + std::to_string(cfg.input_size) + " must be a positive multiple of " +
                      std::to_string(div));
  }
  if (cfg.num_stacks == 0) throw ConfigError("num_stacks must be at least 1");
  if (cfg.inject_after_block == 0 || cfg.inject_after_block > cfg.channel_plan.size()) {
    throw ConfigError("inject_after_block must be in 1.." + std::to_string(cfg.channel_plan.size()));
  }
  const std::size_t lgr_res = cfg.input_size >> cfg.inject_after_block;
  if (cfg.pyramid_enabled && lgr_res % 2 != 0) {
    throw ConfigError("pyramid needs an even feature size at the injection point, got " + std::to_string(lgr_res));
  }
  if (cfg.lambda_orth < 0) throw ConfigError("lambda_orth must be non-negative");
  if (cfg.reason_per_level == 0) throw ConfigError("reason_per_level must be at least 1");
  try {
    validate(cfg.lgr_config(), graph);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

bool set_model_option(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "input_size") cfg.input_size = parse_size(key, value);
  else if (key == "channel_plan") cfg.channel_plan = parse_size_list(key, value);
  else if (key == "convs_per_block") cfg.convs_per_block = parse_size(key, value);
  else if (key == "node_dim") cfg.node_dim = parse_size(key, value);
  else if (key == "num_stacks") cfg.num_stacks = parse_size(key, value);
  else if (key == "clustering_depth") cfg.clustering_depth = parse_size(key, value);
  else if (key == "plain_layers") cfg.plain_layers = parse_size(key, value);
  else if (key == "hierarchy") cfg.hierarchy = value;
  else if (key == "softmax_axis") {
    if (value == "nodes") cfg.softmax_axis = SoftmaxAxis::nodes;
    else if (value == "spatial") cfg.softmax_axis = SoftmaxAxis::spatial;
    else throw ConfigError("config key 'softmax_axis': expected nodes or spatial, got '" + value + "'");
  } else if (key == "tie_deconv") cfg.tie_deconv = parse_bool(key, value);
  else if (key == "regen_down_adjacency") cfg.regen_down_adjacency = parse_bool(key, value);
  else if (key == "reason_per_level") cfg.reason_per_level = parse_size(key, value);
  else if (key == "hierarchy_mask") cfg.hierarchy_mask = parse_bool(key, value);
  else if (key == "lambda_orth") cfg.lambda_orth = parse_double(key, value);
  else if (key == "pyramid_enabled") cfg.pyramid_enabled = parse_bool(key, value);
  else if (key == "residual_after_pyramid") cfg.residual_after_pyramid = parse_bool(key, value);
  else if (key == "inject_after_block") cfg.inject_after_block = parse_size(key, value);
  else return false;
  return true;
}

void write_model_options(const ModelConfig& cfg, std::ostream& os) {
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "input_size = " << cfg.input_size << "\n"
     << "channel_plan = " << format_size_list(cfg.channel_plan) << "\n"
     << "convs_per_block = " << cfg.convs_per_block << "\n"
     << "node_dim = " << cfg.node_dim << "\n"
     << "num_stacks = " << cfg.num_stacks << "\n"
     << "clustering_depth = " << cfg.clustering_depth << "\n"
     << "plain_layers = " << cfg.plain_layers << "\n"
     << "hierarchy = " << cfg.hierarchy << "\n"
     << "softmax_axis = " << (cfg.softmax_axis == SoftmaxAxis::nodes ? "nodes" : "spatial") << "\n"
     << "tie_deconv = " << b(cfg.tie_deconv) << "\n"
     << "regen_down_adjacency = " << b(cfg.regen_down_adjacency) << "\n"
     << "reason_per_level = " << cfg.reason_per_level << "\n"
     << "hierarchy_mask = " << b(cfg.hierarchy_mask) << "\n"
     << "lambda_orth = " << format_double(cfg.lambda_orth) << "\n"
     << "pyramid_enabled = " << b(cfg.pyramid_enabled) << "\n"
     << "residual_after_pyramid = " << b(cfg.residual_after_pyramid) << "\n"
     << "inject_after_block = " << cfg.inject_after_block << "\n";
}

ModelParams init_params(const ModelConfig& cfg, const LayoutGraph& graph, std::uint64_t seed) {
  validate(cfg, graph);
  Rng rng(seed);
  ModelParams p;
  std::size_t cin = 3;
  for (std::size_t c : cfg.channel_plan) {
    for (std::size_t k = 0; k < cfg.convs_per_block; ++k) {
      p.backbone.push_back(conv_params(kKernel * kKernel * cin, c, rng));
      cin = c;
    }
  }
  const LgrConfig lcfg = cfg.lgr_config();
  const std::size_t C = lcfg.channels;
  for (std::size_t s = 0; s < cfg.num_stacks; ++s) {
    p.stacks.push_back(init_lgr_params(graph, lcfg, rng));
    if (cfg.pyramid_enabled) p.pyramid.push_back(conv_params(C, C, rng));
  }
  p.head = conv_params(cin, graph.num_leaves(), rng);
  for (double& v : p.head.bias.data()) v = kHeadBiasInit;
  return p;
}

ModelVars bind(Tape& tape, const ModelParams& params) {
  ModelVars v;
  for (const auto& c : params.backbone) v.backbone.push_back({tape.leaf(c.kernel), tape.leaf(c.bias)});
  for (const auto& s : params.stacks) v.stacks.push_back(bind(tape, s));
  for (const auto& c : params.pyramid) v.pyramid.push_back({tape.leaf(c.kernel), tape.leaf(c.bias)});
  v.head = {tape.leaf(params.head.kernel), tape.leaf(params.head.bias)};
  return v;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for_each_weight(params, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

Var backbone_forward(const Var& x, const ModelVars& w, const ModelConfig& cfg, std::size_t first, std::size_t last) {
  Var f = x;
  for (std::size_t b = first; b < last; ++b) {
    for (std::size_t k = 0; k < cfg.convs_per_block; ++k) {
      const auto& c = w.backbone.at(b * cfg.convs_per_block + k);
      f = ops::relu(ops::conv2d(f, c.kernel, c.bias, kKernel, k == 0 ? 2 : 1, 1));
    }
  }
  return f;
}

Var backbone_forward(const Var& images, const ModelVars& w, const ModelConfig& cfg) {
  if (images.rank() != 4 || images.dim(1) != cfg.input_size || images.dim(2) != cfg.input_size ||
      images.dim(3) != 3) {
    throw DimensionError("expected images [B x " + std::to_string(cfg.input_size) + " x " +
                         std::to_string(cfg.input_size) + " x 3], got " + shape_str(images.shape()));
  }
  return backbone_forward(images, w, cfg, 0, num_blocks(cfg));
}

Var pyramid_post(const Var& features, const ConvWeights<Var>& w, bool enabled) {
  if (!enabled) return features;
  Var coarse = ops::upsample2(ops::avg_pool2(features));
  return ops::relu(ops::add(features, ops::conv2d(coarse, w.kernel, w.bias, 1, 1, 0)));
}

Var model_forward(const Var& images, const LayoutGraph& graph, const ModelVars& w, const ModelConfig& cfg) {
  if (images.rank() != 4 || images.dim(1) != cfg.input_size || images.dim(2) != cfg.input_size ||
      images.dim(3) != 3) {
    throw DimensionError("expected images [B x " + std::to_string(cfg.input_size) + " x " +
                         std::to_string(cfg.input_size) + " x 3], got " + shape_str(images.shape()));
  }
  const LgrConfig lcfg = cfg.lgr_config();
  Var f = backbone_forward(images, w, cfg, 0, cfg.inject_after_block);
  for (std::size_t s = 0; s < w.stacks.size(); ++s) {
    const ConvWeights<Var> none{};
    const ConvWeights<Var>& pw = cfg.pyramid_enabled ? w.pyramid.at(s) : none;
    Var enhanced = lgr_stack(f, graph, w.stacks[s], lcfg);
    if (cfg.residual_after_pyramid) {
      f = ops::add(f, pyramid_post(enhanced, pw, cfg.pyramid_enabled));
    } else {
      f = pyramid_post(ops::add(f, enhanced), pw, cfg.pyramid_enabled);
    }
  }
  f = backbone_forward(f, w, cfg, cfg.inject_after_block, num_blocks(cfg));
  return ops::sigmoid(ops::conv2d(f, w.head.kernel, w.head.bias, 1, 1, 0));
}

Var orthogonality_total(const ModelVars& w, const LayoutGraph& graph, const ModelConfig& cfg) {
  const LgrConfig lcfg = cfg.lgr_config();
  Var total = w.head.bias.tape().constant(Tensor::scalar(0.0));
  for (const auto& s : w.stacks) total = ops::add(total, orthogonality_penalty(s, graph, lcfg));
  return total;
}

Model::Model(ModelConfig cfg, std::uint64_t seed)
    : config(std::move(cfg)), graph(hierarchy_by_name(config.hierarchy)), params(init_params(config, graph, seed)) {}

Model::Model(ModelConfig cfg, ModelParams p)
    : config(std::move(cfg)), graph(hierarchy_by_name(config.hierarchy)), params(std::move(p)) {
  validate(config, graph);
}

Tensor Model::predict(const Tensor& images) const {
  Tape tape;
  ModelParams frozen = params;
  for_each_weight(frozen, [](const std::string&, Tensor& t) { t.set_requires_grad(false); });
  Var out = model_forward(tape.constant(images), graph, bind(tape, frozen), config);
  return out.value();
}

}  // namespace lgr
