#include "lgr/layout_graph.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "lgr/errors.hpp"

namespace lgr {
namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("hierarchy line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

}  // namespace

HierarchySpec parse_hierarchy(const std::string& text, const std::string& name) {
  HierarchySpec spec;
  spec.name = name;
  std::map<std::string, std::size_t> level_of;

  struct PendingEdge {
    NamePair pair;
    std::size_t line;
  };
  std::vector<PendingEdge> pending_edges;

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    const std::string& kw = tok[0];
    auto fail = [&](const std::string& msg) -> ValidationError {
      return ValidationError("hierarchy line " + std::to_string(line_no) + ": " + msg);
    };
    if (kw == "level") {
      if (tok.size() < 3) throw fail("level needs a name and at least one node");
      HierarchyLevel lvl{tok[1], {tok.begin() + 2, tok.end()}};
      for (const auto& n : lvl.nodes) {
        if (!level_of.emplace(n, spec.levels.size()).second) throw fail("duplicate node '" + n + "'");
      }
      spec.levels.push_back(std::move(lvl));
    } else if (kw == "parent") {
      if (tok.size() != 3) throw fail("parent needs <child> <parent>");
      auto [it, inserted] = spec.parent_of.emplace(tok[1], tok[2]);
      if (!inserted && it->second != tok[2]) {
        throw ValidationError("node '" + tok[1] + "' has two parents: '" + it->second + "' and '" +
                              tok[2] + "'");
      }
    } else if (kw == "edge") {
      if (tok.size() != 3) throw fail("edge needs two nodes");
      pending_edges.push_back({{tok[1], tok[2]}, line_no});
    } else if (kw == "symmetric") {
      if (tok.size() != 3) throw fail("symmetric needs <left> <right>");
      spec.symmetric_pairs.emplace_back(tok[1], tok[2]);
    } else if (kw == "layout") {
      if (tok.size() != 4) throw fail("layout needs <leaf> <x> <y>");
      spec.layout[tok[1]] = {parse_double(tok[2], line_no), parse_double(tok[3], line_no)};
    } else if (kw == "garment") {
      if (tok.size() < 5) throw fail("garment needs a name and at least three leaves");
      spec.garments.push_back({tok[1], {tok.begin() + 2, tok.end()}});
    } else {
      throw fail("unknown directive '" + kw + "'");
    }
  }

  spec.edges.assign(spec.levels.size(), {});
  for (const auto& e : pending_edges) {
    auto a = level_of.find(e.pair.first);
    auto b = level_of.find(e.pair.second);
    if (a == level_of.end() || b == level_of.end()) {
      throw ValidationError("hierarchy line " + std::to_string(e.line) + ": edge " + e.pair.first +
                            " - " + e.pair.second + " references an unknown node");
    }
    if (a->second != b->second) {
      throw ValidationError("edge " + e.pair.first + " - " + e.pair.second + " crosses levels");
    }
    spec.edges[a->second].push_back(e.pair);
  }
  validate(spec);
  return spec;
}

HierarchySpec load_hierarchy_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open hierarchy file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  auto stem = path.substr(path.find_last_of('/') == std::string::npos ? 0 : path.find_last_of('/') + 1);
  if (auto dot = stem.rfind('.'); dot != std::string::npos) stem.erase(dot);
  return parse_hierarchy(ss.str(), stem);
}

std::string hierarchy_to_text(const HierarchySpec& spec) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& lvl : spec.levels) {
    os << "level " << lvl.name;
    for (const auto& n : lvl.nodes) os << ' ' << n;
    os << '\n';
  }
  // Parents in level order so the output is stable.
  for (const auto& lvl : spec.levels) {
    for (const auto& n : lvl.nodes) {
      if (auto it = spec.parent_of.find(n); it != spec.parent_of.end()) {
        os << "parent " << n << ' ' << it->second << '\n';
      }
    }
  }
  for (const auto& level_edges : spec.edges) {
    for (const auto& [a, b] : level_edges) os << "edge " << a << ' ' << b << '\n';
  }
  for (const auto& [l, r] : spec.symmetric_pairs) os << "symmetric " << l << ' ' << r << '\n';
  for (const auto& n : spec.leaves()) {
    if (auto it = spec.layout.find(n); it != spec.layout.end()) {
      os << "layout " << n << ' ' << it->second.first << ' ' << it->second.second << '\n';
    }
  }
  for (const auto& g : spec.garments) {
    os << "garment " << g.name;
    for (const auto& n : g.outline) os << ' ' << n;
    os << '\n';
  }
  return os.str();
}

HierarchySpec hierarchy_by_name(const std::string& name_or_path) {
  if (name_or_path == "fld8") return fld8();
  if (name_or_path == "ffld32") return ffld32();
  return load_hierarchy_file(name_or_path);
}

void validate(const HierarchySpec& spec) {
  if (spec.levels.size() < 2) throw ValidationError("hierarchy needs at least a leaf and a root level");
  if (spec.levels.back().nodes.size() != 1) {
    throw ValidationError("last level must hold exactly one root node, found " +
                          std::to_string(spec.levels.back().nodes.size()));
  }
  std::map<std::string, std::size_t> level_of;
  for (std::size_t l = 0; l < spec.levels.size(); ++l) {
    if (spec.levels[l].nodes.empty()) throw ValidationError("level '" + spec.levels[l].name + "' is empty");
    for (const auto& n : spec.levels[l].nodes) {
      if (!level_of.emplace(n, l).second) throw ValidationError("duplicate node '" + n + "'");
    }
  }
  for (const auto& [child, parent] : spec.parent_of) {
    auto c = level_of.find(child);
    if (c == level_of.end()) throw ValidationError("parent entry for unknown node '" + child + "'");
    auto p = level_of.find(parent);
    if (p == level_of.end()) throw ValidationError("node '" + child + "' has unknown parent '" + parent + "'");
    if (p->second != c->second + 1) {
      throw ValidationError("parent of '" + child + "' must be on the next level, got '" + parent + "'");
    }
  }
  const std::string& root = spec.levels.back().nodes.front();
  if (spec.parent_of.count(root)) throw ValidationError("root '" + root + "' must not have a parent");
  for (std::size_t l = 0; l + 1 < spec.levels.size(); ++l) {
    std::set<std::string> has_child;
    for (const auto& n : spec.levels[l].nodes) {
      auto it = spec.parent_of.find(n);
      if (it == spec.parent_of.end()) throw ValidationError("orphan node '" + n + "' has no parent");
      has_child.insert(it->second);
    }
    for (const auto& n : spec.levels[l + 1].nodes) {
      if (!has_child.count(n)) throw ValidationError("node '" + n + "' has no children");
    }
  }
  if (spec.edges.size() != spec.levels.size()) {
    throw ValidationError("edge lists must be given per level");
  }
  for (std::size_t l = 0; l < spec.edges.size(); ++l) {
    for (const auto& [a, b] : spec.edges[l]) {
      auto ia = level_of.find(a);
      auto ib = level_of.find(b);
      if (ia == level_of.end() || ib == level_of.end() || ia->second != l || ib->second != l) {
        throw ValidationError("edge " + a + " - " + b + " does not lie on level '" + spec.levels[l].name + "'");
      }
      if (a == b) throw ValidationError("self-loop edge on '" + a + "'");
    }
  }
  std::set<std::string> paired;
  for (const auto& [l, r] : spec.symmetric_pairs) {
    for (const auto* n : {&l, &r}) {
      auto it = level_of.find(*n);
      if (it == level_of.end() || it->second != 0) {
        throw ValidationError("symmetric pair member '" + *n + "' is not a leaf");
      }
      if (!paired.insert(*n).second) throw ValidationError("leaf '" + *n + "' appears in two symmetric pairs");
    }
    if (l == r) throw ValidationError("symmetric pair pairs '" + l + "' with itself");
    if (spec.parent_of.at(l) != spec.parent_of.at(r)) {
      throw ValidationError("symmetric pair " + l + " / " + r + " does not share a parent");
    }
  }
  for (const auto& [n, xy] : spec.layout) {
    auto it = level_of.find(n);
    if (it == level_of.end() || it->second != 0) throw ValidationError("layout entry for non-leaf '" + n + "'");
  }
  for (const auto& g : spec.garments) {
    for (const auto& n : g.outline) {
      auto it = level_of.find(n);
      if (it == level_of.end() || it->second != 0) {
        throw ValidationError("garment '" + g.name + "' references non-leaf '" + n + "'");
      }
    }
  }
}

Tensor normalize_adjacency(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ValidationError("normalize_adjacency: expected a square matrix, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (a.at(i, i) != 0.0) throw ValidationError("normalize_adjacency: nonzero diagonal at " + std::to_string(i));
    for (std::size_t j = i + 1; j < n; ++j) {
      if (a.at(i, j) != a.at(j, i)) {
        throw ValidationError("normalize_adjacency: asymmetric at (" + std::to_string(i) + ", " +
                              std::to_string(j) + ")");
      }
    }
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t j = 0; j < n; ++j) d += a.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double aij = a.at(i, j) + (i == j ? 1.0 : 0.0);
      out.at(i, j) = inv_sqrt_deg[i] * aij * inv_sqrt_deg[j];
    }
  }
  return out;
}

LayoutGraph::LayoutGraph(HierarchySpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  for (std::size_t l = 0; l < spec_.levels.size(); ++l) {
    const auto& nodes = spec_.levels[l].nodes;
    sizes_.push_back(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) index_[nodes[i]] = {l, i};
  }
  for (std::size_t l = 0; l < sizes_.size(); ++l) {
    Tensor a({sizes_[l], sizes_[l]});
    for (const auto& [u, v] : spec_.edges[l]) {
      const auto i = index_.at(u).second;
      const auto j = index_.at(v).second;
      a.at(i, j) = 1.0;
      a.at(j, i) = 1.0;
    }
    normalized_.push_back(normalize_adjacency(a));
    adjacency_.push_back(std::move(a));
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    Tensor m({sizes_[l], sizes_[l + 1]});
    for (std::size_t i = 0; i < sizes_[l]; ++i) {
      const auto& parent = spec_.parent_of.at(spec_.levels[l].nodes[i]);
      m.at(i, index_.at(parent).second) = 1.0;
    }
    assignment_.push_back(std::move(m));
  }
}

std::optional<std::pair<std::size_t, std::size_t>> LayoutGraph::find(const std::string& node) const {
  auto it = index_.find(node);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t LayoutGraph::leaf_index(const std::string& leaf) const {
  auto it = index_.find(leaf);
  if (it == index_.end() || it->second.first != 0) throw ValidationError("unknown landmark '" + leaf + "'");
  return it->second.second;
}

std::vector<std::size_t> LayoutGraph::mirror_permutation() const {
  std::vector<std::size_t> perm(num_leaves());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (const auto& [l, r] : spec_.symmetric_pairs) {
    const auto il = leaf_index(l);
    const auto ir = leaf_index(r);
    perm[il] = ir;
    perm[ir] = il;
  }
  return perm;
}

LayoutGraph build_hierarchy(const HierarchySpec& spec) { return LayoutGraph(spec); }

}  // namespace lgr
