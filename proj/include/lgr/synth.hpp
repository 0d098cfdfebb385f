#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lgr/layout_graph.hpp"
#include "lgr/rng.hpp"
#include "lgr/tensor.hpp"

namespace lgr {

struct Landmark {
  std::string name;
  double x = 0.0, y = 0.0;  // normalized image coordinates, y pointing down
  bool visible = true;

  friend bool operator==(const Landmark&, const Landmark&) = default;
};

struct SceneTags {
  bool occluded = false;
  bool distractor_present = false;
  std::size_t clutter_level = 0;  // number of background rectangles

  friend bool operator==(const SceneTags&, const SceneTags&) = default;
};

struct SceneAnnotation {
  std::string id;
  std::size_t width = 0, height = 0;
  std::vector<Landmark> landmarks;  // one per hierarchy leaf, in leaf order
  SceneTags tags;

  friend bool operator==(const SceneAnnotation&, const SceneAnnotation&) = default;
};

/// Names, count and coordinate ranges against the hierarchy; throws ValidationError.
void validate(const SceneAnnotation& scene, const LayoutGraph& graph);

struct SynthSpec {
  std::string hierarchy = "fld8";
  std::size_t image_size = 64;
  std::size_t train_count = 600, val_count = 200, test_count = 200;
  double symmetry_jitter = 0.01;  // independent per-landmark noise, garment-frame units
  double shape_jitter = 0.04;     // mirrored noise shared by a left/right pair
  double scale_min = 0.55, scale_max = 0.75;  // garment frame to image width
  double max_rotation_deg = 15.0;
  double distractor_prob = 0.0;
  double occlusion_prob = 0.0;
  double clutter_density = 2.0;  // mean number of background rectangles
  std::uint64_t seed = 1;
};

/// Throws ConfigError on out-of-range fields.
void validate(const SynthSpec& spec);
bool set_synth_option(SynthSpec& spec, const std::string& key, const std::string& value);
void write_synth_options(const SynthSpec& spec, std::ostream& os);

using Rgb = std::array<double, 3>;

/// One drawn figure: leaf positions plus the colours used to paint it.
struct Figure {
  std::vector<std::array<double, 2>> points;  // leaf order, normalized coordinates
  double center_x = 0.0, center_y = 0.0, scale = 0.0, angle = 0.0;
  std::vector<Rgb> garment_colors;
  Rgb skin{};
};

struct ClutterRect {
  double x0, y0, x1, y1;
  Rgb color;
};

/// Everything needed to render a scene; the annotation is the public part.
struct Scene {
  SceneAnnotation annotation;
  Figure person;
  std::optional<Figure> distractor;
  std::vector<ClutterRect> clutter;  // background first
  std::optional<ClutterRect> occluder;
  Rgb background{};
};

Scene sample_scene(Rng& rng, const SynthSpec& spec, const LayoutGraph& graph, const std::string& id);

/// [S x S x 3] image in [0, 1], 2x2 supersampled.
Tensor render_image(const Scene& scene, const LayoutGraph& graph);

/// [H x W x N] unit-peak Gaussians centred on each visible landmark, with cell
/// (u, v) centred at ((u + 0.5) / W, (v + 0.5) / H); invisible landmarks give zero channels.
Tensor render_heatmaps(const std::vector<Landmark>& landmarks, std::size_t height, std::size_t width, double sigma);

/// Images and annotations of one split held in memory.
struct Dataset {
  std::vector<SceneAnnotation> annotations;
  std::vector<Tensor> images;  // [S x S x 3] each

  std::size_t size() const { return annotations.size(); }
};

inline constexpr std::array<const char*, 3> kSplitNames{"train", "val", "test"};

std::size_t split_count(const SynthSpec& spec, const std::string& split);
/// Pure function of (spec, split): scene i draws from its own derived seed.
Dataset generate_split(const SynthSpec& spec, const LayoutGraph& graph, const std::string& split);

/// Writes <dir>/<split>/images/<id>.png, <dir>/<split>/annotations.jsonl and <dir>/manifest.txt.
void generate_dataset(const SynthSpec& spec, const std::string& dir);

std::string annotation_to_json(const SceneAnnotation& scene);
SceneAnnotation annotation_from_json(const std::string& line);
void write_annotations(const std::string& path, const std::vector<SceneAnnotation>& scenes);
std::vector<SceneAnnotation> read_annotations(const std::string& path);

/// Loads <dir>/<split>; images are read from <split>/images/<id>.png (or .ppm).
Dataset load_split(const std::string& dir, const std::string& split);

}  // namespace lgr
