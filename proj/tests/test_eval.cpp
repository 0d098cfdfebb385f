#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "lgr/config.hpp"
#include "lgr/errors.hpp"
#include "lgr/eval.hpp"
#include "lgr/image.hpp"

using namespace lgr;
namespace fs = std::filesystem;

namespace {

Tensor one_hot(std::size_t H, std::size_t W, std::size_t u, std::size_t v) {
  Tensor h({H, W, 1});
  h[(v * W + u)] = 1.0;
  return h;
}

SceneAnnotation annotation(std::vector<Landmark> lms, std::size_t size = 64) {
  return SceneAnnotation{"s", size, size, std::move(lms), {}};
}

const LayoutGraph& fld8_graph() {
  static const LayoutGraph g = build_hierarchy(fld8());
  return g;
}

}  // namespace

TEST(Decode, SinglePeak) {
  const auto p = decode_landmarks(one_hot(8, 8, 3, 5));
  EXPECT_DOUBLE_EQ(p[0].x, 0.4375);
  EXPECT_DOUBLE_EQ(p[0].y, 0.6875);
}

TEST(Decode, UniformPicksFirstCell) {
  const auto p = decode_landmarks(Tensor({8, 8, 2}, 0.3));
  for (const Point2& q : p) EXPECT_EQ(q, (Point2{0.0625, 0.0625}));
}

TEST(Decode, LastCell) {
  const auto p = decode_landmarks(one_hot(8, 8, 7, 7));
  EXPECT_EQ(p[0], (Point2{0.9375, 0.9375}));
  EXPECT_THROW(decode_landmarks(Tensor({8, 8})), DimensionError);
}

TEST(Decode, RenderThenDecodeReturnsCellCentres) {
  for (std::size_t W : {8u, 16u})
    for (std::size_t u = 0; u < W; ++u)
      for (std::size_t v = 0; v < W; v += 3) {
        const Point2 c{(u + 0.5) / W, (v + 0.5) / W};
        const Tensor h = render_heatmaps({{"a", c.x, c.y, true}}, W, W, 1.0);
        EXPECT_EQ(decode_landmarks(h)[0], c);
        EXPECT_NEAR(decode_landmarks_refined(h)[0].x, c.x, 1e-12);
        EXPECT_NEAR(decode_landmarks_refined(h)[0].y, c.y, 1e-12);
      }
}

TEST(Decode, RefinementRecoversInteriorGaussians) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const double x = rng.uniform(0.15, 0.85), y = rng.uniform(0.15, 0.85);
    const Tensor h = render_heatmaps({{"a", x, y, true}}, 8, 8, rng.uniform(0.7, 1.5));
    const Point2 p = decode_landmarks_refined(h)[0];
    EXPECT_NEAR(p.x, x, 1e-9);
    EXPECT_NEAR(p.y, y, 1e-9);
  }
}

TEST(Decode, ArgmaxStaysWithinTheQuantizationBound) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const double x = rng.uniform(), y = rng.uniform();
    const Point2 p = decode_landmarks(render_heatmaps({{"a", x, y, true}}, 8, 8, 1.0))[0];
    EXPECT_LE(std::hypot(p.x - x, p.y - y), std::sqrt(2.0) * 0.5 / 8 + 1e-12);
  }
}

TEST(NormalizedError, Examples) {
  const std::vector<std::string> names{"a"};
  EXPECT_EQ(normalized_error({{{0.3, 0.4}}}, {annotation({{"a", 0.3, 0.4, true}})}, names).average, 0.0);
  EXPECT_DOUBLE_EQ(normalized_error({{{0.25, 0.25}}}, {annotation({{"a", 0.25, 0.5, true}})}, names).average, 0.25);
}

TEST(NormalizedError, InvisibleLandmarksAreExcluded) {
  const std::vector<std::string> names{"a", "b"};
  const auto r = normalized_error({{{0.0, 0.0}, {0.5, 0.5}}, {{0.0, 0.1}, {0.5, 0.6}}},
                                  {annotation({{"a", 0.0, 0.0, true}, {"b", 0.9, 0.9, false}}),
                                   annotation({{"a", 0.0, 0.0, true}, {"b", 0.5, 0.5, true}})},
                                  names);
  EXPECT_EQ(r.counts, (std::vector<std::size_t>{2, 1}));
  EXPECT_NEAR(r.per_landmark[0], 0.05, 1e-15);
  EXPECT_NEAR(r.per_landmark[1], 0.1, 1e-15);
  EXPECT_NEAR(r.average, 0.075, 1e-15);
  EXPECT_EQ(r.samples, 2u);
}

TEST(NormalizedError, AverageIsMeanOfPerLandmarkValues) {
  Rng rng(3);
  const auto& names = fld8_graph().leaf_names();
  std::vector<Prediction> preds;
  std::vector<SceneAnnotation> truth;
  for (int s = 0; s < 30; ++s) {
    Prediction p;
    std::vector<Landmark> lms;
    for (const auto& n : names) {
      p.push_back({rng.uniform(), rng.uniform()});
      lms.push_back({n, rng.uniform(), rng.uniform(), rng.bernoulli(0.8)});
    }
    preds.push_back(p);
    truth.push_back(annotation(lms));
  }
  const NEReport r = normalized_error(preds, truth, names);
  double mean = 0;
  for (double v : r.per_landmark) {
    EXPECT_GE(v, 0.0);
    mean += v;
  }
  EXPECT_NEAR(r.average, mean / names.size(), 1e-15);
}

TEST(NormalizedError, InvariantToPixelResolution) {
  const std::vector<std::string> names{"a"};
  const Prediction p{{0.31, 0.72}};
  const auto small = normalized_error({p}, {annotation({{"a", 0.5, 0.5, true}}, 64)}, names);
  const auto large = normalized_error({p}, {annotation({{"a", 0.5, 0.5, true}}, 224)}, names);
  EXPECT_EQ(small.average, large.average);
}

TEST(NormalizedError, MissingNameIsAValidationError) {
  EXPECT_THROW(normalized_error({{{0.1, 0.1}}}, {annotation({{"b", 0.1, 0.1, true}})}, {"a"}), ValidationError);
  EXPECT_THROW(normalized_error({}, {annotation({})}, {"a"}), DimensionError);
}

TEST(NEReport, TableAndCsv) {
  NEReport r;
  r.names = {"L.Collar", "R.Collar"};
  r.per_landmark = {0.125, 0.25};
  r.counts = {3, 4};
  r.average = 0.1875;
  r.samples = 4;
  std::ostringstream csv, table;
  r.write_csv(csv);
  EXPECT_EQ(csv.str(), "landmark,ne,count\nL.Collar,0.125,3\nR.Collar,0.25,4\naverage,0.1875,4\n");
  r.write_table(table);
  EXPECT_NE(table.str().find("R.Collar"), std::string::npos);
  EXPECT_NE(table.str().find("0.187500"), std::string::npos);
}

TEST(Evaluate, EmptyDatasetAndDeterminism) {
  ModelConfig cfg;
  cfg.num_stacks = 1;
  cfg.node_dim = 8;
  const Model m(cfg, 3);
  try {
    evaluate(m, Dataset{}, Decoder::argmax);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "empty dataset");
  }
  SynthSpec spec;
  spec.val_count = 5;
  const Dataset d = generate_split(spec, m.graph, "val");
  EXPECT_EQ(evaluate(m, d, Decoder::refined, 2), evaluate(m, d, Decoder::refined, 3));
  Dataset wrong = d;
  wrong.annotations[0].landmarks.pop_back();
  EXPECT_THROW(evaluate(m, wrong, Decoder::argmax), ValidationError);
}

TEST(Evaluate, GroundTruthHeatmapsMeetTheQuantizationBound) {
  SynthSpec spec;
  spec.val_count = 100;
  spec.distractor_prob = 0.5;
  const Dataset d = generate_split(spec, fld8_graph(), "val");
  for (std::size_t W : {8u, 16u}) {
    std::vector<Prediction> preds;
    for (const auto& a : d.annotations) preds.push_back(decode_landmarks(render_heatmaps(a.landmarks, W, W, 1.0)));
    const NEReport r = normalized_error(preds, d.annotations, fld8_graph().leaf_names());
    EXPECT_LE(r.average, std::sqrt(2.0) * 0.5 / W);
  }
}

TEST(Export, GrayscaleEncodingOverlayAndDeterminism) {
  const fs::path dir = fs::temp_directory_path() / "lgr_test_export";
  fs::remove_all(dir);
  Tensor heat({8, 8, 2});
  Rng rng(4);
  for (double& v : heat.data()) v = rng.uniform();
  const Tensor image({64, 64, 3}, 0.25);
  export_heatmaps(image, heat, {"a", "b"}, dir.string(), "img");
  const Tensor a = read_image((dir / "img_a.png").string());
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(a[i * 3], to_byte(heat[i * 2]) / 255.0);
  const Tensor overlay = read_image((dir / "img_overlay.png").string());
  EXPECT_EQ(overlay.shape(), (Shape{256, 256, 3}));
  std::size_t marked = 0;
  for (std::size_t i = 0; i < overlay.size(); ++i) marked += overlay[i] != to_byte(0.25) / 255.0;
  EXPECT_GT(marked, 0u);
  const std::string first = read_text_file((dir / "img_overlay.png").string());
  export_heatmaps(image, heat, {"a", "b"}, dir.string(), "img");
  EXPECT_EQ(read_text_file((dir / "img_overlay.png").string()), first);
  EXPECT_THROW(export_heatmaps(image, heat, {"a"}, dir.string(), "img"), DimensionError);
  fs::remove_all(dir);
}

TEST(Export, OverlayRingsSurroundDecodedPoints) {
  const Tensor image({16, 16, 3});
  const Tensor out = overlay_landmarks(image, {{0.5, 0.5}}, 4);
  std::size_t marked = 0;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      if (out.at(y, x, 0) + out.at(y, x, 1) + out.at(y, x, 2) == 0.0) continue;
      ++marked;
      EXPECT_NEAR(std::hypot(x + 0.5 - 32.0, y + 0.5 - 32.0), 6.0, 0.5);
    }
  EXPECT_GT(marked, 20u);
}
