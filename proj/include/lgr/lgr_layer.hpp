#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lgr/autograd.hpp"
#include "lgr/layout_graph.hpp"
#include "lgr/rng.hpp"

namespace lgr {

enum class SoftmaxAxis { nodes, spatial };

struct LgrConfig {
  std::size_t channels = 64;  // feature channels C
  std::size_t node_dim = 32;  // node feature width d
  // Number of clustering/deconvolution level pairs; 0 selects the plain
  // leaf-level reasoning baseline with `plain_layers` graph layers.
  std::size_t clustering_depth = 3;
  std::size_t plain_layers = 2;
  SoftmaxAxis softmax_axis = SoftmaxAxis::nodes;
  bool tie_deconv = false;
  bool regen_down_adjacency = false;
  std::size_t reason_per_level = 1;
  bool hierarchy_mask = true;
};

/// Throws ValidationError if cfg does not fit the graph.
void validate(const LgrConfig& cfg, const LayoutGraph& graph);

// Weight containers are templated so the same layout holds parameter values
// (Tensor) and their recorded counterparts on a tape (Var).

template <class T>
struct ClusterWeights {
  T adjacency_assign;  // [N_low x N_up], pools the adjacency
  T feature_assign;    // [N_low x N_up], pools node features
  T transform;         // [d x d]
};

template <class T>
struct DeconvWeights {
  T adjacency_assign;  // [N_up x N_low], only with regen_down_adjacency
  T feature_assign;    // [N_up x N_low]
  T transform;         // [d x d]
};

template <class T>
struct LgrWeights {
  T node_scores;    // [C x N_leaf]
  T node_features;  // [C x d]
  std::vector<ClusterWeights<T>> cluster;  // one per level pair, bottom-up
  std::vector<DeconvWeights<T>> deconv;    // one per level pair; empty when tied
  std::vector<T> reasoning;                // [d x d] per level (per layer in plain mode)
  T map_scores;                            // [(C + d) x 1]
  T map_features;                          // [d x C]
};

using LgrParams = LgrWeights<Tensor>;
using LgrVars = LgrWeights<Var>;

inline bool present(const Tensor& t) { return !t.empty(); }
inline bool present(const Var& v) { return v.valid(); }

namespace detail {
template <class W, class F>
void visit_lgr_weights(W& w, F&& f) {
  auto visit = [&](const std::string& name, auto& t) {
    if (present(t)) f(name, t);
  };
  visit("node.scores", w.node_scores);
  visit("node.features", w.node_features);
  for (std::size_t i = 0; i < w.cluster.size(); ++i) {
    const std::string p = "up" + std::to_string(i) + ".";
    visit(p + "adj", w.cluster[i].adjacency_assign);
    visit(p + "feat", w.cluster[i].feature_assign);
    visit(p + "transform", w.cluster[i].transform);
  }
  for (std::size_t i = 0; i < w.deconv.size(); ++i) {
    const std::string p = "down" + std::to_string(i) + ".";
    visit(p + "adj", w.deconv[i].adjacency_assign);
    visit(p + "feat", w.deconv[i].feature_assign);
    visit(p + "transform", w.deconv[i].transform);
  }
  for (std::size_t i = 0; i < w.reasoning.size(); ++i) visit("reason" + std::to_string(i), w.reasoning[i]);
  visit("map.scores", w.map_scores);
  visit("map.features", w.map_features);
}
}  // namespace detail

/// Visits every present weight with a stable name ("up0.adj", "reason1", ...).
template <class T, class F>
void for_each_weight(LgrWeights<T>& w, F&& f) {
  detail::visit_lgr_weights(w, f);
}
template <class T, class F>
void for_each_weight(const LgrWeights<T>& w, F&& f) {
  detail::visit_lgr_weights(w, f);
}

/// Records every parameter tensor as a leaf on the tape.
LgrVars bind(Tape& tape, const LgrParams& params);

/// Initial parameters: uniform(+-sqrt(1/fan_in)); masked assignment matrices
/// start at 1/(children of the parent) + uniform noise of 0.01 on their support.
LgrParams init_lgr_params(const LayoutGraph& graph, const LgrConfig& cfg, Rng& rng);

/// All-zero parameters with the shapes init_lgr_params would produce.
LgrParams zero_lgr_params(const LayoutGraph& graph, const LgrConfig& cfg);

// ----------------------------------------------------------------------------
// Forward operations. Feature maps are [HW x C] or batched [B x HW x C]; node
// states follow suit as [N x d] or [B x N x d].

/// Soft-assigns pixels to leaf nodes: relu(softmax(F Ws)^T F Wf).
Var map_to_node(const Var& features, const LgrVars& w, const LgrConfig& cfg);

/// One propagation step relu(A X W).
Var graph_reasoning(const Var& nodes, const Var& adjacency, const Var& weight);

/// Differentiable counterpart of normalize_adjacency for weighted adjacency.
Var normalize_adjacency(const Var& adjacency);

struct ClusterResult {
  Var features;       // [.. x N_up x d]
  Var adjacency;      // normalized [N_up x N_up]
  Var raw_adjacency;  // relu(P^T A P) before symmetrizing and renormalizing
};

/// Pools level `level` into level `level + 1`.
ClusterResult cluster_step(const Var& low_features, const Var& low_adjacency, const LayoutGraph& graph,
                           const LgrVars& w, std::size_t level, const LgrConfig& cfg);

/// Node states of one level kept from the bottom-up pass.
struct LevelCache {
  Var features;
  Var adjacency;
  bool valid() const { return features.valid() && adjacency.valid(); }
};

/// Redistributes level `level + 1` onto level `level`, adds the cached
/// pre-clustering states and reasons over the result.
Var deconv_step(const Var& up_features, const Var& up_adjacency, const LevelCache& cache,
                const LayoutGraph& graph, const LgrVars& w, std::size_t level, const LgrConfig& cfg);

struct ReasonTrace {
  std::size_t cluster_steps = 0;
  std::size_t deconv_steps = 0;
  // (cache level, deconvolution target level) in execution order.
  std::vector<std::pair<std::size_t, std::size_t>> cache_pairs;
};

/// Leaf reasoning, bottom-up clustering to the configured depth, then
/// top-down deconvolution back to the leaves.
Var reason_full(const Var& leaf_features, const LayoutGraph& graph, const LgrVars& w,
                const LgrConfig& cfg, ReasonTrace* trace = nullptr);

/// Projects evolved leaf states back to a feature map of the input's shape.
Var node_to_map(const Var& features, const Var& leaf_nodes, const LgrVars& w, const LgrConfig& cfg);

/// Sum over clustering matrices of ||P^T P - I||_F^2.
Var orthogonality_penalty(const LgrVars& w, const LayoutGraph& graph, const LgrConfig& cfg);

/// map_to_node -> reason_full -> node_to_map.
Var lgr_forward(const Var& features, const LayoutGraph& graph, const LgrVars& w, const LgrConfig& cfg);

}  // namespace lgr
