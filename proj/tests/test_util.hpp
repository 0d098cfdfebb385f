#pragma once

#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgr/layout_graph.hpp"
#include "lgr/lgr_layer.hpp"
#include "lgr/rng.hpp"

namespace lgr::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t.set_requires_grad(true);
}

inline Tensor from_json(const nlohmann::json& rows) {
  const auto m = rows.get<std::vector<std::vector<double>>>();
  Tensor t({m.size(), m.front().size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) t.at(i, j) = m[i][j];
  return t;
}

inline nlohmann::json load_fixture(const std::string& name) {
  std::ifstream in(std::string(LGR_FIXTURE_DIR) + "/" + name);
  return nlohmann::json::parse(in);
}

inline LayoutGraph pair_graph(bool with_edge) {
  std::string text = "level leaf a b\nlevel root r\nparent a r\nparent b r\n";
  if (with_edge) text += "edge a b\n";
  return LayoutGraph(parse_hierarchy(text, with_edge ? "pair" : "pair-noedge"));
}

/// Flattens parameters in for_each_weight order.
inline std::vector<Tensor> flatten(const LgrParams& p) {
  std::vector<Tensor> out;
  LgrParams copy = p;
  for_each_weight(copy, [&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

/// Rebuilds a variable set whose entries are taken from `in` starting at `offset`.
inline LgrVars assemble(Tape& tape, const LgrParams& shape_of, std::span<const Var> in, std::size_t offset = 0) {
  LgrVars v = bind(tape, shape_of);
  std::size_t k = offset;
  for_each_weight(v, [&](const std::string&, Var& x) { x = in[k++]; });
  return v;
}

}  // namespace lgr::testing
