#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lgr/tensor.hpp"

namespace lgr {

using NamePair = std::pair<std::string, std::string>;

struct HierarchyLevel {
  std::string name;
  std::vector<std::string> nodes;
};

struct Garment {
  std::string name;
  std::vector<std::string> outline;  // leaf names, polygon order
};

/// Textual description of a layout hierarchy. Level 0 holds the leaf
/// landmarks, the last level the single root.
struct HierarchySpec {
  std::string name;
  std::vector<HierarchyLevel> levels;
  std::map<std::string, std::string> parent_of;
  // edges[l] are the undirected edges among the nodes of level l.
  std::vector<std::vector<NamePair>> edges;
  std::vector<NamePair> symmetric_pairs;

  // Optional data for the synthetic scene generator.
  std::map<std::string, std::pair<double, double>> layout;
  std::vector<Garment> garments;

  const std::vector<std::string>& leaves() const { return levels.front().nodes; }
  const std::vector<NamePair>& leaf_edges() const { return edges.front(); }
};

/// Parses the plain-text hierarchy format (see data/hierarchies/fld8.lgh).
/// Throws ValidationError with the line number on malformed input.
HierarchySpec parse_hierarchy(const std::string& text, const std::string& name = "custom");
HierarchySpec load_hierarchy_file(const std::string& path);
std::string hierarchy_to_text(const HierarchySpec& spec);

HierarchySpec fld8();
HierarchySpec ffld32();
/// "fld8", "ffld32", or a path to a hierarchy file.
HierarchySpec hierarchy_by_name(const std::string& name_or_path);

/// Throws ValidationError naming the offending node or edge.
void validate(const HierarchySpec& spec);

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
/// A must be square, symmetric, and have a zero diagonal.
Tensor normalize_adjacency(const Tensor& adjacency);

/// Materialized adjacency, normalized adjacency and parent masks of a hierarchy.
class LayoutGraph {
 public:
  explicit LayoutGraph(HierarchySpec spec);

  const HierarchySpec& spec() const noexcept { return spec_; }
  std::size_t num_levels() const noexcept { return sizes_.size(); }
  std::size_t num_level_pairs() const noexcept { return sizes_.size() - 1; }
  const std::vector<std::size_t>& level_sizes() const noexcept { return sizes_; }
  std::size_t num_leaves() const noexcept { return sizes_.front(); }
  const std::vector<std::string>& leaf_names() const { return spec_.leaves(); }

  const Tensor& adjacency(std::size_t level) const { return adjacency_.at(level); }
  const Tensor& normalized(std::size_t level) const { return normalized_.at(level); }
  /// [N_level x N_level+1] with M[i, j] = 1 iff node i's parent is node j.
  const Tensor& assignment(std::size_t pair) const { return assignment_.at(pair); }

  /// Index of a node within its level.
  std::optional<std::pair<std::size_t, std::size_t>> find(const std::string& node) const;
  std::size_t leaf_index(const std::string& leaf) const;
  /// For every leaf, the index of its mirror partner (itself if unpaired).
  std::vector<std::size_t> mirror_permutation() const;

 private:
  HierarchySpec spec_;
  std::vector<std::size_t> sizes_;
  std::vector<Tensor> adjacency_;
  std::vector<Tensor> normalized_;
  std::vector<Tensor> assignment_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> index_;
};

LayoutGraph build_hierarchy(const HierarchySpec& spec);

}  // namespace lgr
