#include "lgr/gradient_suite.hpp"

#include <functional>
#include <map>

#include "lgr/errors.hpp"
#include "lgr/model.hpp"
#include "lgr/ops.hpp"
#include "lgr/rng.hpp"
#include "lgr/training.hpp"

namespace lgr {

namespace {

constexpr std::size_t kChannels = 3;
constexpr std::size_t kNodeDim = 2;
constexpr std::size_t kBatch = 2;
constexpr std::size_t kPixels = 6;
constexpr std::size_t kMaxAttempts = 16;

Tensor random_input(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t.set_requires_grad(true);
}

/// <out, R> for a fixed pseudo-random R; identical on every call for a given salt.
Var project(const Var& out, std::uint64_t salt) {
  Rng rng(Rng::derive(0x5eed, salt));
  Tensor r(out.shape());
  for (double& v : r.data()) v = rng.uniform(-1.0, 1.0);
  return ops::sum(ops::mul(out, out.tape().constant(r)));
}

LgrConfig layer_config(std::size_t depth = 3) {
  LgrConfig cfg;
  cfg.channels = kChannels;
  cfg.node_dim = kNodeDim;
  cfg.clustering_depth = depth;
  return cfg;
}

std::vector<Tensor> flatten(const LgrParams& p) {
  std::vector<Tensor> out;
  for_each_weight(p, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

/// Variables shaped like `shape_of` whose entries are taken from `in` starting at `offset`.
LgrVars assemble(Tape& tape, const LgrParams& shape_of, std::span<const Var> in, std::size_t offset) {
  LgrVars v = bind(tape, shape_of);
  std::size_t k = offset;
  for_each_weight(v, [&](const std::string&, Var& x) { x = in[k++]; });
  return v;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.input_size = 8;
  cfg.channel_plan = {3, 4};
  cfg.convs_per_block = 1;
  cfg.inject_after_block = 2;
  cfg.node_dim = 2;
  cfg.num_stacks = 2;
  cfg.clustering_depth = 3;
  return cfg;
}

/// Redraws every unmasked weight from U(-1, 1) so activations, and hence
/// gradients, are of order one; at initialization scale the gradients are too
/// small for the error measure to discriminate.
template <class P>
void spread(P& params, Rng& rng) {
  for_each_weight(params, [&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v = v != 0.0 ? rng.uniform(-1.0, 1.0) : 0.0;
  });
}

using CaseFn = std::function<GradCheckReport(std::uint64_t seed, const LayoutGraph& graph)>;

// Layer weights followed by the extra inputs; the layer weights are rebuilt
// from the leading entries on every evaluation.
GradCheckReport check_layer(const LayoutGraph& g, const LgrConfig& cfg, Rng& rng, std::vector<Tensor> extra,
                            const std::function<Var(const LgrVars&, std::span<const Var>)>& body) {
  LgrParams p = init_lgr_params(g, cfg, rng);
  spread(p, rng);
  std::vector<Tensor> inputs = flatten(p);
  const std::size_t nparams = inputs.size();
  for (Tensor& t : extra) inputs.push_back(std::move(t));
  auto f = [&](Tape& tape, std::span<const Var> in) {
    return body(assemble(tape, p, in, 0), in.subspan(nparams));
  };
  return finite_diff_check(f, inputs);
}

const std::vector<std::pair<std::string, CaseFn>>& cases() {
  static const std::vector<std::pair<std::string, CaseFn>> all = {
      {"map_to_node",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const LgrConfig cfg = layer_config();
         return check_layer(g, cfg, rng, {random_input({kBatch, kPixels, kChannels}, rng)},
                            [&](const LgrVars& w, std::span<const Var> x) {
                              return project(map_to_node(x[0], w, cfg), 1);
                            });
       }},
      {"graph_reasoning",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const std::size_t n = g.num_leaves();
         std::vector<Tensor> inputs{random_input({kBatch, n, kNodeDim}, rng), random_input({n, n}, rng, 0.0, 1.0),
                                    random_input({kNodeDim, kNodeDim}, rng)};
         auto f = [](Tape&, std::span<const Var> in) { return project(graph_reasoning(in[0], in[1], in[2]), 2); };
         return finite_diff_check(f, inputs);
       }},
      {"adjacency_normalization",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const std::size_t n = g.num_leaves();
         auto f = [](Tape&, std::span<const Var> in) { return project(normalize_adjacency(in[0]), 3); };
         return finite_diff_check(f, {random_input({n, n}, rng, 0.0, 1.0)});
       }},
      {"cluster_step",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const LgrConfig cfg = layer_config();
         const std::size_t n = g.num_leaves();
         Tensor adjacency = g.normalized(0);
         return check_layer(g, cfg, rng,
                            {random_input({kBatch, n, kNodeDim}, rng), adjacency.set_requires_grad(true)},
                            [&](const LgrVars& w, std::span<const Var> x) {
                              const ClusterResult r = cluster_step(x[0], x[1], g, w, 0, cfg);
                              return ops::add(project(r.features, 4), project(r.adjacency, 5));
                            });
       }},
      {"deconv_step_with_skip",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         LgrConfig cfg = layer_config();
         cfg.regen_down_adjacency = true;
         const std::size_t low = g.level_sizes()[0], up = g.level_sizes()[1];
         Tensor up_adj = g.normalized(1), low_adj = g.normalized(0);
         return check_layer(g, cfg, rng,
                            {random_input({kBatch, up, kNodeDim}, rng), up_adj.set_requires_grad(true),
                             random_input({kBatch, low, kNodeDim}, rng), low_adj.set_requires_grad(true)},
                            [&](const LgrVars& w, std::span<const Var> x) {
                              return project(deconv_step(x[0], x[1], {x[2], x[3]}, g, w, 0, cfg), 6);
                            });
       }},
      {"node_to_map",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const LgrConfig cfg = layer_config();
         return check_layer(
             g, cfg, rng,
             {random_input({kBatch, kPixels, kChannels}, rng), random_input({kBatch, g.num_leaves(), kNodeDim}, rng)},
             [&](const LgrVars& w, std::span<const Var> x) { return project(node_to_map(x[0], x[1], w, cfg), 7); });
       }},
      {"orthogonality_penalty",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const LgrConfig cfg = layer_config();
         return check_layer(g, cfg, rng, {}, [&](const LgrVars& w, std::span<const Var>) {
           return orthogonality_penalty(w, g, cfg);
         });
       }},
      {"lgr_forward",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const LgrConfig cfg = layer_config();
         return check_layer(g, cfg, rng, {random_input({kBatch, kPixels, kChannels}, rng)},
                            [&](const LgrVars& w, std::span<const Var> x) {
                              return project(lgr_forward(x[0], g, w, cfg), 8);
                            });
       }},
      {"lgr_forward_plain",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const LgrConfig cfg = layer_config(0);
         return check_layer(g, cfg, rng, {random_input({kBatch, kPixels, kChannels}, rng)},
                            [&](const LgrVars& w, std::span<const Var> x) {
                              return project(lgr_forward(x[0], g, w, cfg), 9);
                            });
       }},
      {"pyramid",
       [](std::uint64_t seed, const LayoutGraph&) {
         Rng rng(seed);
         std::vector<Tensor> inputs{random_input({kBatch, 4, 4, kChannels}, rng),
                                    random_input({kChannels, kChannels}, rng), random_input({kChannels}, rng)};
         auto f = [](Tape&, std::span<const Var> in) {
           return project(pyramid_post(in[0], {in[1], in[2]}, true), 10);
         };
         return finite_diff_check(f, inputs);
       }},
      {"head",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const std::size_t n = g.num_leaves();
         std::vector<Tensor> inputs{random_input({kBatch, 4, 4, kChannels}, rng), random_input({kChannels, n}, rng),
                                    random_input({n}, rng)};
         auto f = [](Tape&, std::span<const Var> in) {
           return project(ops::sigmoid(ops::conv2d(in[0], in[1], in[2], 1, 1, 0)), 11);
         };
         return finite_diff_check(f, inputs);
       }},
      {"backbone",
       [](std::uint64_t seed, const LayoutGraph& g) {
         const ModelConfig cfg = tiny_model();
         ModelParams p = init_params(cfg, g, seed);
         Rng rng(seed);
         spread(p, rng);
         std::vector<Tensor> inputs;
         for (const auto& c : p.backbone) {
           inputs.push_back(c.kernel);
           inputs.push_back(c.bias);
         }
         inputs.push_back(random_input({kBatch, cfg.input_size, cfg.input_size, 3}, rng, 0.0, 1.0));
         auto f = [&](Tape& tape, std::span<const Var> in) {
           ModelVars w = bind(tape, p);
           for (std::size_t i = 0; i < w.backbone.size(); ++i) w.backbone[i] = {in[2 * i], in[2 * i + 1]};
           return project(backbone_forward(in.back(), w, cfg), 12);
         };
         return finite_diff_check(f, inputs);
       }},
      {"heatmap_loss",
       [](std::uint64_t seed, const LayoutGraph& g) {
         Rng rng(seed);
         const std::size_t n = g.num_leaves();
         // Scaled by the element count so the gradient is of order one.
         auto f = [](Tape&, std::span<const Var> in) {
           return ops::scale(ops::mse(in[0], in[1]), static_cast<double>(in[0].value().size()));
         };
         return finite_diff_check(f, {random_input({kBatch, 4, 4, n}, rng, 0.0, 1.0),
                                      random_input({kBatch, 4, 4, n}, rng, 0.0, 1.0)});
       }},
      {"total_loss_end_to_end",
       [](std::uint64_t seed, const LayoutGraph& g) {
         ModelConfig cfg = tiny_model();
         cfg.lambda_orth = 0.5;
         ModelParams p = init_params(cfg, g, seed);
         Rng rng(seed);
         spread(p, rng);
         std::vector<Tensor> inputs;
         for_each_weight(p, [&](const std::string&, const Tensor& t) { inputs.push_back(t); });
         const std::size_t nparams = inputs.size();
         inputs.push_back(random_input({1, cfg.input_size, cfg.input_size, 3}, rng, 0.0, 1.0));
         const std::size_t fs = cfg.feature_size();
         Tensor target({1, fs, fs, g.num_leaves()});
         for (double& v : target.data()) v = rng.uniform();
         auto f = [&](Tape& tape, std::span<const Var> in) {
           ModelVars w = bind(tape, p);
           std::size_t k = 0;
           for_each_weight(w, [&](const std::string&, Var& x) { x = in[k++]; });
           Var heat = model_forward(in[nparams], g, w, cfg);
           return total_loss(heat, tape.constant(target), w, g, cfg);
         };
         GradCheckOptions opts;
         opts.max_coords_per_input = 24;
         return finite_diff_check(f, inputs, opts);
       }},
  };
  return all;
}

}  // namespace

std::vector<std::string> gradient_suite_ops() {
  std::vector<std::string> names;
  for (const auto& c : cases()) names.push_back(c.first);
  return names;
}

std::vector<GradientCase> run_gradient_suite(const std::vector<std::uint64_t>& seeds,
                                             const std::vector<std::string>& ops) {
  std::vector<std::string> selected = ops.empty() ? gradient_suite_ops() : ops;
  std::map<std::string, const CaseFn*> by_name;
  for (const auto& c : cases()) by_name[c.first] = &c.second;
  for (const std::string& op : selected) {
    if (!by_name.count(op)) throw ArgumentError("unknown gradient check '" + op + "'");
  }
  const LayoutGraph graph = build_hierarchy(fld8());
  std::vector<GradientCase> out;
  for (const std::string& op : selected) {
    for (std::uint64_t seed : seeds) {
      GradientCase c{op, seed, {}, 0};
      // Random instances whose relus are all inactive have identically zero
      // gradients and would pass vacuously; such draws are replaced.
      while (c.attempts < kMaxAttempts) {
        c.report = (*by_name[op])(Rng::derive(seed, c.attempts++), graph);
        if (c.report.max_abs_grad >= kMinGradient) break;
      }
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace lgr
