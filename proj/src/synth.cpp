#include "lgr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lgr/config.hpp"
#include "lgr/errors.hpp"
#include "lgr/image.hpp"

namespace lgr {
namespace {

namespace fs = std::filesystem;
using Point = std::array<double, 2>;

constexpr double kFrameMargin = 0.02;
constexpr double kOrderGap = 0.1;      // leaves this far apart vertically keep their order
constexpr double kHeadRadius = 0.13;   // garment-frame units
constexpr double kHeadGap = 0.16;      // head centre above the highest leaf
constexpr double kMarkerRadius = 0.05;  // dot drawn at leaves that are not on a garment outline
constexpr int kMaxTries = 100;
constexpr std::size_t kSupersample = 2;

double color_distance(const Rgb& a, const Rgb& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Rgb random_color(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

Rgb contrasting_color(Rng& rng, const std::vector<Rgb>& avoid, double min_distance) {
  Rgb c = random_color(rng);
  for (int t = 0; t < kMaxTries; ++t) {
    bool ok = true;
    for (const Rgb& a : avoid) ok = ok && color_distance(a, c) >= min_distance;
    if (ok) break;
    c = random_color(rng);
  }
  return c;
}

std::vector<Point> canonical_layout(const HierarchySpec& hs) {
  std::vector<Point> g;
  for (const std::string& leaf : hs.leaves()) {
    const auto it = hs.layout.find(leaf);
    if (it == hs.layout.end()) {
      throw ValidationError("hierarchy '" + hs.name + "' has no layout position for leaf '" + leaf + "'");
    }
    g.push_back({it->second.first, it->second.second});
  }
  return g;
}

bool keeps_vertical_order(const std::vector<Point>& canonical, const std::vector<Point>& g) {
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j)
      if (canonical[i][1] + kOrderGap < canonical[j][1] && !(g[i][1] < g[j][1])) return false;
  return true;
}

// Garment-frame leaf positions with mirrored pair jitter and independent noise.
std::vector<Point> jittered_layout(Rng& rng, const SynthSpec& spec, const LayoutGraph& graph) {
  const HierarchySpec& hs = graph.spec();
  const std::vector<Point> canonical = canonical_layout(hs);
  const std::vector<std::size_t> mirror = graph.mirror_permutation();
  for (int t = 0; t < kMaxTries; ++t) {
    std::vector<Point> g = canonical;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (mirror[i] < i) continue;
      const double dx = spec.shape_jitter * rng.normal(), dy = spec.shape_jitter * rng.normal();
      g[i][0] += dx;
      g[i][1] += dy;
      if (mirror[i] != i) {
        g[mirror[i]][0] -= dx;
        g[mirror[i]][1] += dy;
      }
    }
    for (Point& p : g) {
      p[0] += spec.symmetry_jitter * rng.normal();
      p[1] += spec.symmetry_jitter * rng.normal();
    }
    if (keeps_vertical_order(canonical, g)) return g;
  }
  return canonical;
}

Point to_image(const Figure& f, const Point& g) {
  const double c = std::cos(f.angle), s = std::sin(f.angle);
  return {f.center_x + f.scale * (c * g[0] - s * g[1]), f.center_y + f.scale * (s * g[0] + c * g[1])};
}

bool inside_frame(const std::vector<Point>& pts) {
  return std::all_of(pts.begin(), pts.end(), [](const Point& p) {
    return p[0] >= kFrameMargin && p[0] <= 1 - kFrameMargin && p[1] >= kFrameMargin && p[1] <= 1 - kFrameMargin;
  });
}

Figure place_figure(const std::vector<Point>& garment_frame, double cx, double cy, double scale, double angle) {
  Figure f;
  f.center_x = cx;
  f.center_y = cy;
  f.scale = scale;
  f.angle = angle;
  for (const Point& g : garment_frame) f.points.push_back(to_image(f, g));
  return f;
}

void paint_colors(Figure& f, Rng& rng, const LayoutGraph& graph, const Rgb& background) {
  std::vector<Rgb> avoid{background};
  for (std::size_t i = 0; i < graph.spec().garments.size(); ++i) {
    f.garment_colors.push_back(contrasting_color(rng, avoid, 0.35));
    avoid.push_back(f.garment_colors.back());
  }
  const double tone = rng.uniform(0.6, 1.0);
  f.skin = {0.95 * tone, 0.78 * tone, 0.62 * tone};
}

double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }

// Supersampled canvas; shapes are tested against sample centres.
class Canvas {
 public:
  Canvas(std::size_t size, const Rgb& background)
      : size_(size), n_(size * kSupersample), pixels_(n_ * n_, background) {}

  template <class Inside>
  void fill(double x0, double y0, double x1, double y1, const Rgb& color, Inside inside) {
    const auto lo = [&](double v) { return static_cast<std::size_t>(std::clamp(std::floor(v * n_), 0.0, double(n_))); };
    const auto hi = [&](double v) { return static_cast<std::size_t>(std::clamp(std::ceil(v * n_), 0.0, double(n_))); };
    for (std::size_t r = lo(y0); r < hi(y1); ++r) {
      const double y = (r + 0.5) / n_;
      for (std::size_t c = lo(x0); c < hi(x1); ++c) {
        const double x = (c + 0.5) / n_;
        if (inside(x, y)) pixels_[r * n_ + c] = color;
      }
    }
  }

  void rect(const ClutterRect& r) {
    fill(r.x0, r.y0, r.x1, r.y1, r.color, [](double, double) { return true; });
  }

  void disc(const Point& c, double radius, const Rgb& color) {
    fill(c[0] - radius, c[1] - radius, c[0] + radius, c[1] + radius, color, [&](double x, double y) {
      return (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) <= radius * radius;
    });
  }

  void polygon(const std::vector<Point>& poly, const Rgb& color) {
    double x0 = 1, y0 = 1, x1 = 0, y1 = 0;
    for (const Point& p : poly) {
      x0 = std::min(x0, p[0]);
      y0 = std::min(y0, p[1]);
      x1 = std::max(x1, p[0]);
      y1 = std::max(y1, p[1]);
    }
    // Dilated by half a pixel so that every vertex pixel carries paint.
    const double grow = 0.5 / size_;
    fill(x0 - grow, y0 - grow, x1 + grow, y1 + grow, color, [&](double x, double y) {
      bool in = false;
      double nearest = grow * grow + 1;
      for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point& a = poly[i];
        const Point& b = poly[j];
        if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
        const double ex = a[0] - b[0], ey = a[1] - b[1];
        const double t = std::clamp(((x - b[0]) * ex + (y - b[1]) * ey) / (ex * ex + ey * ey), 0.0, 1.0);
        const double dx = x - b[0] - t * ex, dy = y - b[1] - t * ey;
        nearest = std::min(nearest, dx * dx + dy * dy);
      }
      return in || nearest <= grow * grow;
    });
  }

  Tensor downsample() const {
    Tensor img({size_, size_, 3});
    const double w = 1.0 / (kSupersample * kSupersample);
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t c = 0; c < n_; ++c)
        for (std::size_t k = 0; k < 3; ++k)
          img.at(r / kSupersample, c / kSupersample, k) += w * pixels_[r * n_ + c][k];
    return img;
  }

 private:
  std::size_t size_, n_;
  std::vector<Rgb> pixels_;
};

void paint_figure(Canvas& canvas, const Figure& f, const LayoutGraph& graph) {
  const HierarchySpec& hs = graph.spec();
  std::set<std::size_t> outlined;
  for (std::size_t g = 0; g < hs.garments.size(); ++g) {
    std::vector<Point> poly;
    for (const std::string& leaf : hs.garments[g].outline) {
      const std::size_t i = graph.leaf_index(leaf);
      poly.push_back(f.points[i]);
      outlined.insert(i);
    }
    canvas.polygon(poly, f.garment_colors[g]);
  }
  double top = 0;
  for (const auto& [leaf, pos] : hs.layout) top = std::min(top, pos.second);
  canvas.disc(to_image(f, {0.0, top - kHeadGap}), kHeadRadius * f.scale, f.skin);
  const Rgb marker{0.1, 0.1, 0.1};
  for (std::size_t i = 0; i < f.points.size(); ++i)
    if (!outlined.count(i)) canvas.disc(f.points[i], kMarkerRadius * f.scale, marker);
}

}  // namespace

void validate(const SceneAnnotation& scene, const LayoutGraph& graph) {
  const auto& leaves = graph.leaf_names();
  if (scene.landmarks.size() != leaves.size()) {
    throw ValidationError("scene '" + scene.id + "' has " + std::to_string(scene.landmarks.size()) +
                          " landmarks, hierarchy has " + std::to_string(leaves.size()) + " leaves");
  }
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Landmark& l = scene.landmarks[i];
    if (l.name != leaves[i]) {
      throw ValidationError("scene '" + scene.id + "': landmark " + std::to_string(i) + " is '" + l.name +
                            "', expected '" + leaves[i] + "'");
    }
    if (l.visible && !(l.x >= 0 && l.x <= 1 && l.y >= 0 && l.y <= 1)) {
      throw ValidationError("scene '" + scene.id + "': visible landmark '" + l.name + "' lies outside [0,1]^2");
    }
  }
}

void validate(const SynthSpec& spec) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0 && p <= 1)) throw ConfigError(std::string(name) + " must be in [0, 1]");
  };
  prob(spec.distractor_prob, "distractor_prob");
  prob(spec.occlusion_prob, "occlusion_prob");
  if (spec.image_size == 0) throw ConfigError("image_size must be positive");
  if (spec.symmetry_jitter < 0 || spec.shape_jitter < 0) throw ConfigError("jitter must be non-negative");
  if (!(spec.scale_min > 0 && spec.scale_min <= spec.scale_max)) {
    throw ConfigError("scale range must satisfy 0 < scale_min <= scale_max");
  }
  if (spec.max_rotation_deg < 0 || spec.max_rotation_deg > 90) throw ConfigError("max_rotation_deg must be in [0, 90]");
  if (spec.clutter_density < 0) throw ConfigError("clutter_density must be non-negative");
}

bool set_synth_option(SynthSpec& spec, const std::string& key, const std::string& value) {
  if (key == "hierarchy") spec.hierarchy = value;
  else if (key == "image_size") spec.image_size = parse_size(key, value);
  else if (key == "train_count") spec.train_count = parse_size(key, value);
  else if (key == "val_count") spec.val_count = parse_size(key, value);
  else if (key == "test_count") spec.test_count = parse_size(key, value);
  else if (key == "symmetry_jitter") spec.symmetry_jitter = parse_double(key, value);
  else if (key == "shape_jitter") spec.shape_jitter = parse_double(key, value);
  else if (key == "scale_min") spec.scale_min = parse_double(key, value);
  else if (key == "scale_max") spec.scale_max = parse_double(key, value);
  else if (key == "max_rotation_deg") spec.max_rotation_deg = parse_double(key, value);
  else if (key == "distractor_prob") spec.distractor_prob = parse_double(key, value);
  else if (key == "occlusion_prob") spec.occlusion_prob = parse_double(key, value);
  else if (key == "clutter_density") spec.clutter_density = parse_double(key, value);
  else if (key == "synth_seed") spec.seed = parse_u64(key, value);
  else return false;
  return true;
}

void write_synth_options(const SynthSpec& spec, std::ostream& os) {
  os << "hierarchy = " << spec.hierarchy << "\n"
     << "image_size = " << spec.image_size << "\n"
     << "train_count = " << spec.train_count << "\n"
     << "val_count = " << spec.val_count << "\n"
     << "test_count = " << spec.test_count << "\n"
     << "symmetry_jitter = " << format_double(spec.symmetry_jitter) << "\n"
     << "shape_jitter = " << format_double(spec.shape_jitter) << "\n"
     << "scale_min = " << format_double(spec.scale_min) << "\n"
     << "scale_max = " << format_double(spec.scale_max) << "\n"
     << "max_rotation_deg = " << format_double(spec.max_rotation_deg) << "\n"
     << "distractor_prob = " << format_double(spec.distractor_prob) << "\n"
     << "occlusion_prob = " << format_double(spec.occlusion_prob) << "\n"
     << "clutter_density = " << format_double(spec.clutter_density) << "\n"
     << "synth_seed = " << spec.seed << "\n";
}

Scene sample_scene(Rng& rng, const SynthSpec& spec, const LayoutGraph& graph, const std::string& id) {
  Scene scene;
  scene.background = random_color(rng);
  const bool distractor = rng.bernoulli(spec.distractor_prob);
  const double max_angle = deg_to_rad(spec.max_rotation_deg);

  const std::vector<Point> person_frame = jittered_layout(rng, spec, graph);
  double side = 0.0;
  for (int t = 0; t <= kMaxTries; ++t) {
    const double scale = rng.uniform(spec.scale_min, spec.scale_max);
    const double angle = rng.uniform(-max_angle, max_angle);
    double cx = rng.uniform(0.42, 0.58), cy = rng.uniform(0.46, 0.54);
    if (distractor) {
      side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      cx = 0.5 - side * rng.uniform(0.08, 0.14);
    }
    if (t == kMaxTries) {
      scene.person = place_figure(person_frame, 0.5, 0.5, spec.scale_min, 0.0);
      break;
    }
    scene.person = place_figure(person_frame, cx, cy, scale, angle);
    if (inside_frame(scene.person.points)) break;
  }
  paint_colors(scene.person, rng, graph, scene.background);

  if (distractor) {
    const std::vector<Point> frame = jittered_layout(rng, spec, graph);
    const Figure& p = scene.person;
    scene.distractor = place_figure(frame, p.center_x + side * rng.uniform(0.32, 0.4),
                                    p.center_y + rng.uniform(-0.08, 0.12), p.scale * rng.uniform(0.5, 0.7),
                                    rng.uniform(-max_angle, max_angle));
    paint_colors(*scene.distractor, rng, graph, scene.background);
  }

  const std::size_t clutter = rng.index(static_cast<std::uint64_t>(std::floor(2 * spec.clutter_density)) + 1);
  for (std::size_t i = 0; i < clutter; ++i) {
    const double w = rng.uniform(0.05, 0.25), h = rng.uniform(0.05, 0.25);
    const double x = rng.uniform(-w / 2, 1 - w / 2), y = rng.uniform(-h / 2, 1 - h / 2);
    scene.clutter.push_back({x, y, x + w, y + h, random_color(rng)});
  }

  SceneAnnotation& a = scene.annotation;
  a.id = id;
  a.width = a.height = spec.image_size;
  a.tags.distractor_present = distractor;
  a.tags.clutter_level = clutter;
  for (std::size_t i = 0; i < graph.num_leaves(); ++i) {
    const Point& p = scene.person.points[i];
    a.landmarks.push_back({graph.leaf_names()[i], p[0], p[1], p[0] >= 0 && p[0] <= 1 && p[1] >= 0 && p[1] <= 1});
  }

  if (rng.bernoulli(spec.occlusion_prob)) {
    const Point& p = scene.person.points[rng.index(graph.num_leaves())];
    const double half = rng.uniform(0.04, 0.07);
    const double ox = rng.uniform(-half / 2, half / 2), oy = rng.uniform(-half / 2, half / 2);
    scene.occluder = ClutterRect{p[0] + ox - half, p[1] + oy - half, p[0] + ox + half, p[1] + oy + half,
                                 random_color(rng)};
    a.tags.occluded = true;
  }
  return scene;
}

Tensor render_image(const Scene& scene, const LayoutGraph& graph) {
  Canvas canvas(scene.annotation.width, scene.background);
  for (const ClutterRect& r : scene.clutter) canvas.rect(r);
  if (scene.distractor) paint_figure(canvas, *scene.distractor, graph);
  paint_figure(canvas, scene.person, graph);
  if (scene.occluder) canvas.rect(*scene.occluder);
  return canvas.downsample();
}

Tensor render_heatmaps(const std::vector<Landmark>& landmarks, std::size_t height, std::size_t width, double sigma) {
  if (!(sigma > 0)) throw ArgumentError("heatmap sigma must be positive");
  const std::size_t N = landmarks.size();
  Tensor h({height, width, N});
  const double inv = 1.0 / (2 * sigma * sigma);
  for (std::size_t n = 0; n < N; ++n) {
    const Landmark& l = landmarks[n];
    if (!l.visible) continue;
    const double u0 = l.x * width - 0.5, v0 = l.y * height - 0.5;
    for (std::size_t v = 0; v < height; ++v)
      for (std::size_t u = 0; u < width; ++u) {
        const double du = u - u0, dv = v - v0;
        h[(v * width + u) * N + n] = std::exp(-(du * du + dv * dv) * inv);
      }
  }
  return h;
}

std::size_t split_count(const SynthSpec& spec, const std::string& split) {
  if (split == "train") return spec.train_count;
  if (split == "val") return spec.val_count;
  if (split == "test") return spec.test_count;
  throw ArgumentError("unknown split '" + split + "' (expected train, val or test)");
}

Dataset generate_split(const SynthSpec& spec, const LayoutGraph& graph, const std::string& split) {
  validate(spec);
  const std::size_t count = split_count(spec, split);
  const std::uint64_t split_index =
      static_cast<std::uint64_t>(std::find(kSplitNames.begin(), kSplitNames.end(), split) - kSplitNames.begin());
  Dataset d;
  for (std::size_t i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s-%06zu", split.c_str(), i);
    Rng rng(Rng::derive(spec.seed, (split_index << 32) | i));
    const Scene s = sample_scene(rng, spec, graph, id);
    d.images.push_back(render_image(s, graph));
    d.annotations.push_back(s.annotation);
  }
  return d;
}

void generate_dataset(const SynthSpec& spec, const std::string& dir) {
  validate(spec);
  const LayoutGraph graph = build_hierarchy(hierarchy_by_name(spec.hierarchy));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  for (const char* split : kSplitNames) {
    const fs::path base = fs::path(dir) / split;
    fs::create_directories(base / "images", ec);
    if (ec) throw IoError("cannot create '" + (base / "images").string() + "': " + ec.message());
    const Dataset d = generate_split(spec, graph, split);
    for (std::size_t i = 0; i < d.size(); ++i) {
      write_image((base / "images" / (d.annotations[i].id + ".png")).string(), d.images[i]);
    }
    write_annotations((base / "annotations.jsonl").string(), d.annotations);
  }
  const std::string manifest = (fs::path(dir) / "manifest.txt").string();
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot open '" + manifest + "'");
  out << "# synthetic landmark dataset\n";
  write_synth_options(spec, out);
  if (!out) throw IoError("failed writing '" + manifest + "'");
}

std::string annotation_to_json(const SceneAnnotation& scene) {
  nlohmann::ordered_json j;
  j["id"] = scene.id;
  j["width"] = scene.width;
  j["height"] = scene.height;
  j["landmarks"] = nlohmann::ordered_json::array();
  for (const Landmark& l : scene.landmarks) {
    j["landmarks"].push_back({{"name", l.name}, {"x", l.x}, {"y", l.y}, {"visible", l.visible}});
  }
  j["tags"] = {{"occluded", scene.tags.occluded},
               {"distractor_present", scene.tags.distractor_present},
               {"clutter_level", scene.tags.clutter_level}};
  return j.dump();
}

SceneAnnotation annotation_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    SceneAnnotation s;
    s.id = j.at("id").get<std::string>();
    s.width = j.at("width").get<std::size_t>();
    s.height = j.at("height").get<std::size_t>();
    for (const auto& l : j.at("landmarks")) {
      s.landmarks.push_back(
          {l.at("name").get<std::string>(), l.at("x").get<double>(), l.at("y").get<double>(), l.at("visible").get<bool>()});
    }
    if (j.contains("tags")) {
      const auto& t = j.at("tags");
      s.tags.occluded = t.value("occluded", false);
      s.tags.distractor_present = t.value("distractor_present", false);
      s.tags.clutter_level = t.value("clutter_level", std::size_t{0});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed annotation record: ") + e.what());
  }
}

void write_annotations(const std::string& path, const std::vector<SceneAnnotation>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "'");
  for (const SceneAnnotation& s : scenes) out << annotation_to_json(s) << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<SceneAnnotation> read_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<SceneAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(annotation_from_json(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Dataset load_split(const std::string& dir, const std::string& split) {
  const fs::path base = fs::path(dir) / split;
  Dataset d;
  d.annotations = read_annotations((base / "annotations.jsonl").string());
  for (const SceneAnnotation& a : d.annotations) {
    fs::path img = base / "images" / (a.id + ".png");
    if (!fs::exists(img)) img.replace_extension(".ppm");
    Tensor t = read_image(img.string());
    if (t.dim(0) != a.height || t.dim(1) != a.width) {
      throw ValidationError(img.string() + ": image is " + shape_str(t.shape()) + " but the annotation says " +
                            std::to_string(a.height) + "x" + std::to_string(a.width));
    }
    d.images.push_back(std::move(t));
  }
  return d;
}

}  // namespace lgr
