#include "lgr/lgr_layer.hpp"

#include <cmath>

#include "lgr/errors.hpp"
#include "lgr/ops.hpp"

namespace lgr {
namespace {

Tensor transposed(const Tensor& m) {
  Tensor t({m.dim(1), m.dim(0)});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) t.at(j, i) = m.at(i, j);
  return t;
}

Tensor off_diagonal_mask(std::size_t n) {
  Tensor m({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 0.0;
  return m;
}

Var masked(const Var& w, const Tensor& mask, const LgrConfig& cfg) {
  if (!cfg.hierarchy_mask) return w;
  return ops::mul(w, w.tape().constant(mask));
}

// Turns pooled adjacency into a propagation operator: symmetrize, drop
// self-loops, renormalize.
Var renormalize(const Var& raw) {
  Tape& tape = raw.tape();
  Var sym = ops::scale(ops::add(raw, ops::transpose(raw)), 0.5);
  Var off = ops::mul(sym, tape.constant(off_diagonal_mask(raw.dim(0))));
  return normalize_adjacency(off);
}

struct Batched {
  Var value;
  bool was_batched;
};

Batched as_batched(const Var& x, const char* what) {
  if (x.rank() == 3) return {x, true};
  if (x.rank() == 2) return {ops::reshape(x, {1, x.dim(0), x.dim(1)}), false};
  throw DimensionError(std::string(what) + ": expected rank 2 or 3, got " + shape_str(x.shape()));
}

Var unbatch(const Var& x, bool was_batched) {
  if (was_batched) return x;
  return ops::reshape(x, {x.dim(1), x.dim(2)});
}

std::size_t softmax_axis(const LgrConfig& cfg) { return cfg.softmax_axis == SoftmaxAxis::nodes ? 2 : 1; }

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

}  // namespace

void validate(const LgrConfig& cfg, const LayoutGraph& graph) {
  if (cfg.channels == 0 || cfg.node_dim == 0) throw ValidationError("channels and node_dim must be positive");
  if (cfg.clustering_depth > graph.num_level_pairs()) {
    throw ValidationError("clustering_depth " + std::to_string(cfg.clustering_depth) + " exceeds the " +
                          std::to_string(graph.num_level_pairs()) + " level pairs of hierarchy '" +
                          graph.spec().name + "'");
  }
  if (cfg.clustering_depth == 0 && cfg.plain_layers == 0) {
    throw ValidationError("plain reasoning needs at least one graph layer");
  }
}

LgrParams zero_lgr_params(const LayoutGraph& graph, const LgrConfig& cfg) {
  validate(cfg, graph);
  const std::size_t C = cfg.channels, d = cfg.node_dim;
  const auto& n = graph.level_sizes();
  LgrParams p;
  p.node_scores = Tensor({C, n[0]});
  p.node_features = Tensor({C, d});
  for (std::size_t l = 0; l < cfg.clustering_depth; ++l) {
    p.cluster.push_back({Tensor({n[l], n[l + 1]}), Tensor({n[l], n[l + 1]}), Tensor({d, d})});
    if (!cfg.tie_deconv) {
      DeconvWeights<Tensor> dw;
      if (cfg.regen_down_adjacency) dw.adjacency_assign = Tensor({n[l + 1], n[l]});
      dw.feature_assign = Tensor({n[l + 1], n[l]});
      dw.transform = Tensor({d, d});
      p.deconv.push_back(std::move(dw));
    }
  }
  const std::size_t reasoning = cfg.clustering_depth == 0 ? cfg.plain_layers : cfg.clustering_depth + 1;
  for (std::size_t i = 0; i < reasoning; ++i) p.reasoning.emplace_back(Shape{d, d});
  p.map_scores = Tensor({C + d, 1});
  p.map_features = Tensor({d, C});
  for_each_weight(p, [](const std::string&, Tensor& t) { t.set_requires_grad(true); });
  return p;
}

LgrParams init_lgr_params(const LayoutGraph& graph, const LgrConfig& cfg, Rng& rng) {
  LgrParams p = zero_lgr_params(graph, cfg);
  auto dense = [&](Tensor& t) { fill_uniform(t, std::sqrt(1.0 / static_cast<double>(t.dim(0))), rng); };
  dense(p.node_scores);
  dense(p.node_features);
  for (std::size_t l = 0; l < p.cluster.size(); ++l) {
    const Tensor& mask = graph.assignment(l);
    // Children count of each parent (column sums of the mask).
    std::vector<double> children(mask.dim(1), 0.0);
    for (std::size_t i = 0; i < mask.dim(0); ++i)
      for (std::size_t j = 0; j < mask.dim(1); ++j) children[j] += mask.at(i, j);
    auto assign = [&](Tensor& t, bool parent_on_cols) {
      if (!cfg.hierarchy_mask) {
        dense(t);
        return;
      }
      const Tensor m = parent_on_cols ? mask : transposed(mask);
      for (std::size_t i = 0; i < t.dim(0); ++i) {
        for (std::size_t j = 0; j < t.dim(1); ++j) {
          const double noise = rng.uniform(-0.01, 0.01);
          t.at(i, j) = m.at(i, j) != 0.0 ? 1.0 / children[parent_on_cols ? j : i] + noise : 0.0;
        }
      }
    };
    assign(p.cluster[l].adjacency_assign, true);
    assign(p.cluster[l].feature_assign, true);
    dense(p.cluster[l].transform);
    if (l < p.deconv.size()) {
      if (present(p.deconv[l].adjacency_assign)) assign(p.deconv[l].adjacency_assign, false);
      assign(p.deconv[l].feature_assign, false);
      dense(p.deconv[l].transform);
    }
  }
  for (auto& w : p.reasoning) dense(w);
  dense(p.map_scores);
  dense(p.map_features);
  return p;
}

LgrVars bind(Tape& tape, const LgrParams& params) {
  auto leaf = [&](const Tensor& t) { return present(t) ? tape.leaf(t) : Var{}; };
  LgrVars v;
  v.node_scores = leaf(params.node_scores);
  v.node_features = leaf(params.node_features);
  for (const auto& c : params.cluster) {
    v.cluster.push_back({leaf(c.adjacency_assign), leaf(c.feature_assign), leaf(c.transform)});
  }
  for (const auto& d : params.deconv) {
    v.deconv.push_back({leaf(d.adjacency_assign), leaf(d.feature_assign), leaf(d.transform)});
  }
  for (const auto& r : params.reasoning) v.reasoning.push_back(leaf(r));
  v.map_scores = leaf(params.map_scores);
  v.map_features = leaf(params.map_features);
  return v;
}

Var map_to_node(const Var& features, const LgrVars& w, const LgrConfig& cfg) {
  auto [f, batched] = as_batched(features, "map_to_node");
  if (f.dim(2) != w.node_scores.dim(0) || f.dim(2) != w.node_features.dim(0)) {
    throw DimensionError("map_to_node: feature channels " + shape_str(f.shape()) + " vs sampling matrices " +
                         shape_str(w.node_scores.shape()) + ", " + shape_str(w.node_features.shape()));
  }
  Var assign = ops::softmax(ops::matmul(f, w.node_scores), softmax_axis(cfg));
  Var sampled = ops::matmul(f, w.node_features);
  Var nodes = ops::relu(ops::matmul(ops::transpose(assign), sampled));
  return unbatch(nodes, batched);
}

Var graph_reasoning(const Var& nodes, const Var& adjacency, const Var& weight) {
  const std::size_t n = nodes.dim(nodes.rank() - 2);
  if (adjacency.rank() != 2 || adjacency.dim(0) != n || adjacency.dim(1) != n) {
    throw DimensionError("graph_reasoning: adjacency " + shape_str(adjacency.shape()) + " vs nodes " +
                         shape_str(nodes.shape()));
  }
  return ops::relu(ops::matmul(ops::matmul(adjacency, nodes), weight));
}

Var normalize_adjacency(const Var& adjacency) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw DimensionError("normalize_adjacency: expected square matrix, got " + shape_str(adjacency.shape()));
  }
  Tape& tape = adjacency.tape();
  Var with_self = ops::add(adjacency, tape.constant(Tensor::eye(adjacency.dim(0))));
  Var inv_sqrt = ops::power(ops::sum_last_axis(with_self), -0.5);
  return ops::mul(with_self, ops::matmul(inv_sqrt, ops::transpose(inv_sqrt)));
}

ClusterResult cluster_step(const Var& low_features, const Var& low_adjacency, const LayoutGraph& graph,
                           const LgrVars& w, std::size_t level, const LgrConfig& cfg) {
  if (level >= w.cluster.size()) {
    throw ArgumentError("cluster_step: level " + std::to_string(level) + " out of range (depth " +
                        std::to_string(w.cluster.size()) + ")");
  }
  const auto& cw = w.cluster[level];
  const Tensor& mask = graph.assignment(level);
  Var pool_adj = masked(cw.adjacency_assign, mask, cfg);
  Var pool_feat = masked(cw.feature_assign, mask, cfg);

  ClusterResult r;
  Var propagated = ops::matmul(low_adjacency, low_features);
  r.features = ops::relu(ops::matmul(ops::matmul(ops::transpose(pool_feat), propagated), cw.transform));
  r.raw_adjacency = ops::relu(ops::matmul(ops::matmul(ops::transpose(pool_adj), low_adjacency), pool_adj));
  r.adjacency = renormalize(r.raw_adjacency);
  return r;
}

Var deconv_step(const Var& up_features, const Var& up_adjacency, const LevelCache& cache,
                const LayoutGraph& graph, const LgrVars& w, std::size_t level, const LgrConfig& cfg) {
  if (!cache.valid()) throw ContractError("deconv_step: no cached states for level " + std::to_string(level));
  if (level >= w.cluster.size()) {
    throw ArgumentError("deconv_step: level " + std::to_string(level) + " out of range");
  }
  const Tensor& mask = graph.assignment(level);
  Var spread;     // [N_low x N_up]
  Var transform;  // [d x d]
  Var regen;      // [N_low x N_up] for adjacency regeneration
  if (cfg.tie_deconv) {
    spread = masked(w.cluster[level].feature_assign, mask, cfg);
    transform = ops::transpose(w.cluster[level].transform);
    regen = masked(w.cluster[level].adjacency_assign, mask, cfg);
  } else {
    if (level >= w.deconv.size()) throw ArgumentError("deconv_step: level " + std::to_string(level) + " out of range");
    const Tensor mask_t = transposed(mask);
    spread = ops::transpose(masked(w.deconv[level].feature_assign, mask_t, cfg));
    transform = w.deconv[level].transform;
    if (cfg.regen_down_adjacency) regen = ops::transpose(masked(w.deconv[level].adjacency_assign, mask_t, cfg));
  }
  Var down = ops::relu(ops::matmul(ops::matmul(spread, ops::matmul(up_adjacency, up_features)), transform));

  Var low_adjacency = cache.adjacency;
  if (cfg.regen_down_adjacency) {
    low_adjacency = renormalize(ops::relu(ops::matmul(ops::matmul(regen, up_adjacency), ops::transpose(regen))));
  }
  return graph_reasoning(ops::add(down, cache.features), low_adjacency, w.reasoning.at(level));
}

Var reason_full(const Var& leaf_features, const LayoutGraph& graph, const LgrVars& w, const LgrConfig& cfg,
                ReasonTrace* trace) {
  Tape& tape = leaf_features.tape();
  const Var leaf_adjacency = tape.constant(graph.normalized(0));
  if (cfg.clustering_depth == 0) {
    Var x = leaf_features;
    for (const Var& weight : w.reasoning) x = graph_reasoning(x, leaf_adjacency, weight);
    return x;
  }

  Var x = graph_reasoning(leaf_features, leaf_adjacency, w.reasoning.at(0));
  Var adjacency = leaf_adjacency;
  std::vector<LevelCache> caches(cfg.clustering_depth);
  for (std::size_t l = 0; l < cfg.clustering_depth; ++l) {
    caches[l] = {x, adjacency};
    ClusterResult up = cluster_step(x, adjacency, graph, w, l, cfg);
    if (trace) ++trace->cluster_steps;
    x = up.features;
    adjacency = up.adjacency;
    for (std::size_t k = 0; k < cfg.reason_per_level; ++k) {
      x = graph_reasoning(x, adjacency, w.reasoning.at(l + 1));
    }
  }
  for (std::size_t l = cfg.clustering_depth; l-- > 0;) {
    x = deconv_step(x, adjacency, caches[l], graph, w, l, cfg);
    if (trace) {
      ++trace->deconv_steps;
      trace->cache_pairs.emplace_back(l, l);
    }
    adjacency = caches[l].adjacency;
    caches[l] = {};
  }
  return x;
}

Var node_to_map(const Var& features, const Var& leaf_nodes, const LgrVars& w, const LgrConfig& cfg) {
  auto [f, batched] = as_batched(features, "node_to_map");
  auto [x, nodes_batched] = as_batched(leaf_nodes, "node_to_map");
  if (batched != nodes_batched || f.dim(0) != x.dim(0)) {
    throw DimensionError("node_to_map: features " + shape_str(features.shape()) + " vs nodes " +
                         shape_str(leaf_nodes.shape()));
  }
  const std::size_t B = f.dim(0), HW = f.dim(1), C = f.dim(2);
  const std::size_t N = x.dim(1), d = x.dim(2);
  if (w.map_scores.dim(0) != C + d || w.map_features.dim(0) != d || w.map_features.dim(1) != C) {
    throw DimensionError("node_to_map: weights " + shape_str(w.map_scores.shape()) + ", " +
                         shape_str(w.map_features.shape()) + " do not fit C=" + std::to_string(C) +
                         ", d=" + std::to_string(d));
  }
  Var spread_features = ops::broadcast_to(ops::reshape(f, {B, HW, 1, C}), {B, HW, N, C});
  Var spread_nodes = ops::broadcast_to(ops::reshape(x, {B, 1, N, d}), {B, HW, N, d});
  Var joint = ops::concat_last_axis(spread_features, spread_nodes);
  Var scores = ops::reshape(ops::matmul(ops::reshape(joint, {B * HW * N, C + d}), w.map_scores), {B, HW, N});
  Var assign = ops::softmax(scores, softmax_axis(cfg));
  Var projected = ops::relu(ops::matmul(x, w.map_features));
  Var out = ops::relu(ops::matmul(assign, projected));
  return unbatch(out, batched);
}

Var orthogonality_penalty(const LgrVars& w, const LayoutGraph& graph, const LgrConfig& cfg) {
  Tape& tape = w.node_scores.tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  for (std::size_t l = 0; l < w.cluster.size(); ++l) {
    Var p = masked(w.cluster[l].adjacency_assign, graph.assignment(l), cfg);
    Var gram = ops::matmul(ops::transpose(p), p);
    Var diff = ops::sub(gram, tape.constant(Tensor::eye(p.dim(1))));
    total = ops::add(total, ops::sum_squares(diff));
  }
  return total;
}

Var lgr_forward(const Var& features, const LayoutGraph& graph, const LgrVars& w, const LgrConfig& cfg) {
  Var leaves = map_to_node(features, w, cfg);
  Var evolved = reason_full(leaves, graph, w, cfg);
  return node_to_map(features, evolved, w, cfg);
}

}  // namespace lgr
