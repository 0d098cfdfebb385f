#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lgr/config.hpp"
#include "lgr/errors.hpp"
#include "lgr/image.hpp"
#include "lgr/synth.hpp"

using namespace lgr;
namespace fs = std::filesystem;

namespace {

const LayoutGraph& fld8_graph() {
  static const LayoutGraph g = build_hierarchy(fld8());
  return g;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lgr_test_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

// Reflects a point across the line through `c` with direction angle + pi/2 (the torso axis).
std::array<double, 2> reflect_across_axis(const Figure& f, const std::array<double, 2>& p) {
  const double ax = -std::sin(f.angle), ay = std::cos(f.angle);
  const double dx = p[0] - f.center_x, dy = p[1] - f.center_y;
  const double along = dx * ax + dy * ay;
  return {f.center_x + 2 * along * ax - dx, f.center_y + 2 * along * ay - dy};
}

bool point_in_polygon(double x, double y, const std::vector<std::array<double, 2>>& poly) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    if ((poly[i][1] > y) != (poly[j][1] > y) &&
        x < (poly[j][0] - poly[i][0]) * (y - poly[i][1]) / (poly[j][1] - poly[i][1]) + poly[i][0])
      in = !in;
  }
  return in;
}

double distance_to_polygon(double x, double y, const std::vector<std::array<double, 2>>& poly) {
  double best = 1e9;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const double ex = poly[i][0] - poly[j][0], ey = poly[i][1] - poly[j][1];
    const double t = std::clamp(((x - poly[j][0]) * ex + (y - poly[j][1]) * ey) / (ex * ex + ey * ey), 0.0, 1.0);
    best = std::min(best, std::hypot(x - poly[j][0] - t * ex, y - poly[j][1] - t * ey));
  }
  return best;
}

}  // namespace

TEST(SampleScene, ExactMirrorWithoutSymmetryJitter) {
  SynthSpec spec;
  spec.symmetry_jitter = 0.0;
  const LayoutGraph& g = fld8_graph();
  const auto mirror = g.mirror_permutation();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Scene s = sample_scene(rng, spec, g, "s");
    for (std::size_t i = 0; i < mirror.size(); ++i) {
      const auto r = reflect_across_axis(s.person, s.person.points[i]);
      EXPECT_NEAR(r[0], s.person.points[mirror[i]][0], 1e-9);
      EXPECT_NEAR(r[1], s.person.points[mirror[i]][1], 1e-9);
    }
  }
}

TEST(SampleScene, DistractorProbabilityZeroNeverAddsOne) {
  SynthSpec spec;
  spec.distractor_prob = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Scene s = sample_scene(rng, spec, fld8_graph(), "s");
    EXPECT_FALSE(s.annotation.tags.distractor_present);
    EXPECT_FALSE(s.distractor.has_value());
  }
  spec.distractor_prob = 1.0;
  Rng rng(3);
  EXPECT_TRUE(sample_scene(rng, spec, fld8_graph(), "s").annotation.tags.distractor_present);
}

TEST(SampleScene, DeterministicAndValid) {
  SynthSpec spec;
  spec.distractor_prob = 0.5;
  spec.occlusion_prob = 0.5;
  for (const LayoutGraph& g : {fld8_graph(), build_hierarchy(ffld32())}) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      Rng a(seed), b(seed);
      const Scene s1 = sample_scene(a, spec, g, "x");
      const Scene s2 = sample_scene(b, spec, g, "x");
      EXPECT_EQ(s1.annotation, s2.annotation);
      EXPECT_NO_THROW(validate(s1.annotation, g));
      for (const Landmark& l : s1.annotation.landmarks) EXPECT_TRUE(l.visible);
    }
  }
}

TEST(SampleScene, VerticalOrderingHolds) {
  SynthSpec spec;
  spec.max_rotation_deg = 0.0;
  spec.shape_jitter = 0.1;
  const LayoutGraph& g = fld8_graph();
  const auto collar = g.leaf_index("L.Collar"), waist = g.leaf_index("L.Waistline"), hem = g.leaf_index("L.Hem");
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto& lm = sample_scene(rng, spec, g, "s").annotation.landmarks;
    EXPECT_LT(lm[collar].y, lm[waist].y);
    EXPECT_LT(lm[waist].y, lm[hem].y);
  }
}

TEST(RenderImage, UniformBackgroundWithoutClutterOrDistractor) {
  SynthSpec spec;
  spec.clutter_density = 0.0;
  Rng rng(4);
  Scene s = sample_scene(rng, spec, fld8_graph(), "s");
  ASSERT_TRUE(s.clutter.empty());
  // Nothing but background when the figure is moved out of view.
  for (auto& p : s.person.points) p = {p[0] + 5.0, p[1]};
  s.person.center_x += 5.0;
  const Tensor img = render_image(s, fld8_graph());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_DOUBLE_EQ(img[i], s.background[i % 3]);
}

TEST(RenderImage, DeterministicPixels) {
  SynthSpec spec;
  spec.distractor_prob = 1.0;
  Rng a(9), b(9);
  EXPECT_EQ(render_image(sample_scene(a, spec, fld8_graph(), "s"), fld8_graph()),
            render_image(sample_scene(b, spec, fld8_graph(), "s"), fld8_graph()));
}

TEST(RenderImage, LandmarksLieOnTheirGarments) {
  SynthSpec spec;
  spec.distractor_prob = 0.5;
  const LayoutGraph& g = fld8_graph();
  const auto& garments = g.spec().garments;
  std::size_t good_scenes = 0, scenes = 200;
  for (std::uint64_t seed = 0; seed < scenes; ++seed) {
    Rng rng(seed);
    const Scene s = sample_scene(rng, spec, g, "s");
    const Tensor img = render_image(s, g);
    const double px = 1.0 / spec.image_size;
    bool all = true;
    for (std::size_t gi = 0; gi < garments.size(); ++gi) {
      std::vector<std::array<double, 2>> poly;
      for (const auto& leaf : garments[gi].outline) poly.push_back(s.person.points[g.leaf_index(leaf)]);
      for (const auto& leaf : garments[gi].outline) {
        const Landmark& l = s.annotation.landmarks[g.leaf_index(leaf)];
        // The pixel holding the landmark must touch the polygon and carry paint.
        const double cx = (std::floor(l.x / px) + 0.5) * px, cy = (std::floor(l.y / px) + 0.5) * px;
        const bool touches = point_in_polygon(cx, cy, poly) || distance_to_polygon(cx, cy, poly) <= px * M_SQRT1_2;
        const std::size_t r = static_cast<std::size_t>(l.y / px), c = static_cast<std::size_t>(l.x / px);
        double diff = 0;
        for (std::size_t k = 0; k < 3; ++k) diff += std::abs(img.at(r, c, k) - s.background[k]);
        all = all && touches && diff > 1e-6;
      }
    }
    good_scenes += all;
  }
  EXPECT_GE(good_scenes, scenes * 95 / 100);
}

TEST(RenderHeatmaps, PeakAtCellCentre) {
  const Tensor h = render_heatmaps({{"a", 3.5 / 8, 5.5 / 8, true}}, 8, 8, 1.0);
  EXPECT_EQ(h.at(5, 3, 0), 1.0);
  for (double v : h.data()) EXPECT_LE(v, 1.0);
}

TEST(RenderHeatmaps, InvisibleGivesZeroChannel) {
  const Tensor h = render_heatmaps({{"a", 0.5, 0.5, true}, {"b", 0.3, 0.3, false}}, 8, 8, 1.0);
  for (std::size_t i = 1; i < h.size(); i += 2) EXPECT_EQ(h[i], 0.0);
  EXPECT_GT(h.at(3, 3, 0), 0.0);
}

TEST(RenderHeatmaps, MassMatchesGaussianIntegral) {
  Rng rng(5);
  for (double sigma : {0.8, 1.0, 1.5}) {
    for (int t = 0; t < 20; ++t) {
      const double x = rng.uniform(0.35, 0.65), y = rng.uniform(0.35, 0.65);
      const Tensor h = render_heatmaps({{"a", x, y, true}}, 24, 24, sigma);
      double sum = 0;
      for (double v : h.data()) sum += v;
      EXPECT_NEAR(sum / (2 * std::numbers::pi * sigma * sigma), 1.0, 0.02);
    }
  }
  EXPECT_THROW(render_heatmaps({}, 8, 8, 0.0), ArgumentError);
}

TEST(Annotations, JsonRoundTrip) {
  SynthSpec spec;
  spec.distractor_prob = 0.5;
  spec.occlusion_prob = 0.5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    SceneAnnotation a = sample_scene(rng, spec, fld8_graph(), "id-" + std::to_string(seed)).annotation;
    a.landmarks[2].visible = false;
    EXPECT_EQ(annotation_from_json(annotation_to_json(a)), a);
  }
  EXPECT_THROW(annotation_from_json("{\"id\": 3}"), ValidationError);
  EXPECT_THROW(annotation_from_json("not json"), ValidationError);
}

TEST(Annotations, ValidationAgainstHierarchy) {
  const LayoutGraph& g = fld8_graph();
  Rng rng(1);
  const SceneAnnotation good = sample_scene(rng, SynthSpec{}, g, "s").annotation;
  SceneAnnotation a = good;
  a.landmarks.pop_back();
  EXPECT_THROW(validate(a, g), ValidationError);
  a = good;
  std::swap(a.landmarks[0], a.landmarks[1]);
  EXPECT_THROW(validate(a, g), ValidationError);
  a = good;
  a.landmarks[0].x = 1.5;
  EXPECT_THROW(validate(a, g), ValidationError);
  a.landmarks[0].visible = false;
  EXPECT_NO_THROW(validate(a, g));
}

TEST(Dataset, CountsAndRegenerationAreExact) {
  SynthSpec spec;
  spec.train_count = 6;
  spec.val_count = 2;
  spec.test_count = 2;
  spec.distractor_prob = 0.5;
  const fs::path a = scratch_dir("a"), b = scratch_dir("b");
  generate_dataset(spec, a.string());
  generate_dataset(spec, b.string());
  std::size_t images = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) images += e.path().extension() == ".png";
  EXPECT_EQ(images, 10u);
  for (const char* split : kSplitNames) {
    const auto rel = fs::path(split) / "annotations.jsonl";
    EXPECT_EQ(slurp(a / rel), slurp(b / rel));
  }
  EXPECT_EQ(slurp(a / "manifest.txt"), slurp(b / "manifest.txt"));
  fs::remove_all(b);

  const Dataset mem = generate_split(spec, fld8_graph(), "train");
  const Dataset disk = load_split(a.string(), "train");
  ASSERT_EQ(disk.size(), 6u);
  EXPECT_EQ(disk.annotations, mem.annotations);
  for (std::size_t i = 0; i < disk.size(); ++i) EXPECT_LE(max_abs_diff(disk.images[i], mem.images[i]), 0.5 / 255 + 1e-12);
  fs::remove_all(a);
}

TEST(Dataset, ManifestEchoesSpec) {
  SynthSpec spec;
  spec.train_count = 1;
  spec.val_count = spec.test_count = 0;
  spec.seed = 77;
  spec.clutter_density = 0.5;
  const fs::path dir = scratch_dir("manifest");
  generate_dataset(spec, dir.string());
  SynthSpec back;
  for (const auto& e : parse_config(slurp(dir / "manifest.txt"))) EXPECT_TRUE(set_synth_option(back, e.key, e.value));
  std::ostringstream x, y;
  write_synth_options(spec, x);
  write_synth_options(back, y);
  EXPECT_EQ(x.str(), y.str());
  fs::remove_all(dir);
}

TEST(Dataset, IoErrorsNamePaths) {
  try {
    load_split("/nonexistent/dir", "train");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir"), std::string::npos);
  }
  EXPECT_THROW(split_count(SynthSpec{}, "holdout"), ArgumentError);
  SynthSpec bad;
  bad.distractor_prob = 1.5;
  EXPECT_THROW(validate(bad), ConfigError);
}

TEST(ImageIo, PngAndPnmRoundTrip) {
  Rng rng(2);
  Tensor img({5, 7, 3});
  for (double& v : img.data()) v = std::round(rng.uniform() * 255) / 255;
  const fs::path dir = scratch_dir("img");
  fs::create_directories(dir);
  for (const char* name : {"a.png", "a.ppm"}) {
    write_image((dir / name).string(), img);
    EXPECT_LE(max_abs_diff(read_image((dir / name).string()), img), 1e-12) << name;
  }
  Tensor gray({3, 4, 1}, 0.5);
  write_image((dir / "g.png").string(), gray);
  const Tensor back = read_image((dir / "g.png").string());
  EXPECT_EQ(back.shape(), (Shape{3, 4, 3}));
  EXPECT_EQ(back[0], 128 / 255.0);
  EXPECT_THROW(read_image((dir / "missing.png").string()), IoError);
  fs::remove_all(dir);
}
