#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "lgr/errors.hpp"
#include "lgr/layout_graph.hpp"
#include "lgr/rng.hpp"

using namespace lgr;

namespace {

const char* kPair = R"(
level leaf a b
level root r
parent a r
parent b r
edge a b
)";

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  Tensor c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j)
      for (std::size_t k = 0; k < a.dim(1); ++k) c.at(i, j) += a.at(i, k) * b.at(k, j);
  return c;
}

}  // namespace

TEST(BuildHierarchy, SmallestHierarchy) {
  LayoutGraph g = build_hierarchy(parse_hierarchy(kPair));
  EXPECT_EQ(g.adjacency(0), Tensor::matrix({{0, 1}, {1, 0}}));
  EXPECT_EQ(g.assignment(0), Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(g.level_sizes(), (std::vector<std::size_t>{2, 1}));
}

TEST(BuildHierarchy, Fld8LevelSizes) {
  LayoutGraph g = build_hierarchy(fld8());
  EXPECT_EQ(g.level_sizes(), (std::vector<std::size_t>{8, 4, 2, 1}));
}

TEST(BuildHierarchy, Ffld32LevelSizes) {
  LayoutGraph g = build_hierarchy(ffld32());
  EXPECT_EQ(g.level_sizes(), (std::vector<std::size_t>{32, 12, 2, 1}));
}

TEST(BuildHierarchy, Fld8HasCollarPair) {
  const auto spec = fld8();
  const NamePair collar{"L.Collar", "R.Collar"};
  EXPECT_NE(std::find(spec.symmetric_pairs.begin(), spec.symmetric_pairs.end(), collar),
            spec.symmetric_pairs.end());
  EXPECT_EQ(spec.symmetric_pairs.size(), 4u);
}

TEST(BuildHierarchy, TwoParentsRejected) {
  const char* bad = R"(
level leaf a b
level mid m n
level root r
parent a m
parent a n
parent b m
parent m r
parent n r
)";
  try {
    parse_hierarchy(bad);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos) << e.what();
  }
}

TEST(BuildHierarchy, OrphanRejected) {
  const char* bad = R"(
level leaf a b
level root r
parent a r
)";
  try {
    build_hierarchy(parse_hierarchy(bad));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos) << e.what();
  }
}

TEST(BuildHierarchy, RootMustBeSingle) {
  const char* bad = R"(
level leaf a b
level root r s
parent a r
parent b s
)";
  EXPECT_THROW(build_hierarchy(parse_hierarchy(bad)), ValidationError);
}

TEST(BuildHierarchy, SymmetricPairMustShareParent) {
  const char* bad = R"(
level leaf a b c d
level mid m n
level root r
parent a m
parent b m
parent c n
parent d n
parent m r
parent n r
symmetric a c
)";
  EXPECT_THROW(build_hierarchy(parse_hierarchy(bad)), ValidationError);
}

TEST(BuildHierarchy, UnknownDirectiveNamesLine) {
  try {
    parse_hierarchy("level leaf a\nlevel root r\nparent a r\nbogus a\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(NormalizeAdjacency, NoEdgesGivesIdentity) {
  for (std::size_t n : {1u, 3u, 7u}) EXPECT_EQ(normalize_adjacency(Tensor::zeros({n, n})), Tensor::eye(n));
}

TEST(NormalizeAdjacency, SingleEdge) {
  const Tensor a = normalize_adjacency(Tensor::matrix({{0, 1}, {1, 0}}));
  for (double v : a.data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(NormalizeAdjacency, BlockDiagonal) {
  const Tensor a = normalize_adjacency(Tensor::matrix({{0, 1, 0}, {1, 0, 0}, {0, 0, 0}}));
  const Tensor want = Tensor::matrix({{0.5, 0.5, 0}, {0.5, 0.5, 0}, {0, 0, 1}});
  EXPECT_LE(max_abs_diff(a, want), 1e-15);
}

TEST(NormalizeAdjacency, RejectsBadInput) {
  EXPECT_THROW(normalize_adjacency(Tensor::zeros({2, 3})), ValidationError);
  EXPECT_THROW(normalize_adjacency(Tensor::matrix({{0, 1}, {0, 0}})), ValidationError);
  EXPECT_THROW(normalize_adjacency(Tensor::matrix({{1, 0}, {0, 0}})), ValidationError);
}

TEST(NormalizeAdjacency, DegreeIdentityOnShippedGraphs) {
  for (const auto& spec : {fld8(), ffld32()}) {
    LayoutGraph g(spec);
    for (std::size_t l = 0; l < g.num_levels(); ++l) {
      const Tensor& a = g.adjacency(l);
      const Tensor& an = g.normalized(l);
      const std::size_t n = a.dim(0);
      std::vector<double> deg(n, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        EXPECT_EQ(a.at(i, i), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
          EXPECT_EQ(a.at(i, j), a.at(j, i));
          EXPECT_TRUE(a.at(i, j) == 0.0 || a.at(i, j) == 1.0);
          deg[i] += a.at(i, j);
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          EXPECT_NEAR(an.at(i, j), an.at(j, i), 1e-15);
          EXPECT_GE(an.at(i, j), 0.0);
          row += std::sqrt(deg[i]) * an.at(i, j) * std::sqrt(deg[j]);
        }
        EXPECT_NEAR(row, deg[i], 1e-12) << spec.name << " level " << l;
      }
    }
  }
}

TEST(Masks, RowsSumToOneAndComposeToRoot) {
  for (const auto& spec : {fld8(), ffld32()}) {
    LayoutGraph g(spec);
    Tensor acc = Tensor::eye(g.num_leaves());
    for (std::size_t p = 0; p < g.num_level_pairs(); ++p) {
      const Tensor& m = g.assignment(p);
      for (std::size_t i = 0; i < m.dim(0); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < m.dim(1); ++j) s += m.at(i, j);
        EXPECT_EQ(s, 1.0);
      }
      acc = matmul_plain(acc, m);
    }
    EXPECT_EQ(acc, Tensor::ones({g.num_leaves(), 1})) << spec.name;
  }
}

TEST(Permutation, ReorderingNodesConjugatesAdjacency) {
  const HierarchySpec spec = fld8();
  const LayoutGraph base(spec);
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    HierarchySpec shuffled = spec;
    for (auto& level : shuffled.levels) rng.shuffle(level.nodes);
    const LayoutGraph g(shuffled);
    for (std::size_t l = 0; l < g.num_levels(); ++l) {
      const auto& names = shuffled.levels[l].nodes;
      const auto& orig = spec.levels[l].nodes;
      std::vector<std::size_t> perm(names.size());
      for (std::size_t i = 0; i < names.size(); ++i) {
        perm[i] = static_cast<std::size_t>(std::find(orig.begin(), orig.end(), names[i]) - orig.begin());
      }
      for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t j = 0; j < names.size(); ++j) {
          EXPECT_EQ(g.adjacency(l).at(i, j), base.adjacency(l).at(perm[i], perm[j]));
          EXPECT_EQ(g.normalized(l).at(i, j), base.normalized(l).at(perm[i], perm[j]));
        }
    }
  }
}

TEST(Format, TextRoundTrip) {
  for (const auto& spec : {fld8(), ffld32()}) {
    const HierarchySpec again = parse_hierarchy(hierarchy_to_text(spec), spec.name);
    EXPECT_EQ(again.levels.size(), spec.levels.size());
    for (std::size_t l = 0; l < spec.levels.size(); ++l) EXPECT_EQ(again.levels[l].nodes, spec.levels[l].nodes);
    EXPECT_EQ(again.parent_of, spec.parent_of);
    EXPECT_EQ(again.edges, spec.edges);
    EXPECT_EQ(again.symmetric_pairs, spec.symmetric_pairs);
    EXPECT_EQ(again.layout, spec.layout);
    EXPECT_EQ(again.garments.size(), spec.garments.size());
  }
}

TEST(Format, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "lgr_pair_test.lgh";
  std::ofstream(path) << kPair;
  const LayoutGraph g = build_hierarchy(hierarchy_by_name(path.string()));
  EXPECT_EQ(g.num_leaves(), 2u);
  std::filesystem::remove(path);
  EXPECT_THROW(load_hierarchy_file("/nonexistent/x.lgh"), IoError);
}

TEST(Mirror, PermutationSwapsPairs) {
  LayoutGraph g(fld8());
  const auto m = g.mirror_permutation();
  EXPECT_EQ(m[g.leaf_index("L.Collar")], g.leaf_index("R.Collar"));
  EXPECT_EQ(m[g.leaf_index("R.Hem")], g.leaf_index("L.Hem"));
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m[m[i]], i);
}
