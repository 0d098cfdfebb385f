#include "lgr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>

#include "lgr/errors.hpp"
#include "lgr/image.hpp"

namespace lgr {
namespace {

struct Peak {
  std::size_t u = 0, v = 0;
};

std::vector<Peak> argmax_cells(const Tensor& h) {
  if (h.rank() != 3) throw DimensionError("expected a heatmap [H x W x N], got " + shape_str(h.shape()));
  const std::size_t H = h.dim(0), W = h.dim(1), N = h.dim(2);
  std::vector<Peak> peaks(N);
  std::vector<double> best(N, -INFINITY);
  for (std::size_t v = 0; v < H; ++v)
    for (std::size_t u = 0; u < W; ++u)
      for (std::size_t n = 0; n < N; ++n) {
        const double x = h[(v * W + u) * N + n];
        if (x > best[n]) {
          best[n] = x;
          peaks[n] = {u, v};
        }
      }
  return peaks;
}

// Vertex offset of the parabola through (-1, a), (0, b), (1, c) in log space.
double log_parabola_offset(double a, double b, double c) {
  constexpr double kFloor = 1e-300;
  const double la = std::log(std::max(a, kFloor)), lb = std::log(std::max(b, kFloor)),
               lc = std::log(std::max(c, kFloor));
  const double curvature = la - 2 * lb + lc;
  if (!(curvature < 0)) return 0.0;
  return std::clamp(0.5 * (la - lc) / curvature, -0.5, 0.5);
}

}  // namespace

std::vector<Point2> decode_landmarks(const Tensor& heatmap) {
  const auto peaks = argmax_cells(heatmap);
  const double H = heatmap.dim(0), W = heatmap.dim(1);
  std::vector<Point2> out;
  for (const Peak& p : peaks) out.push_back({(p.u + 0.5) / W, (p.v + 0.5) / H});
  return out;
}

std::vector<Point2> decode_landmarks_refined(const Tensor& heatmap) {
  const auto peaks = argmax_cells(heatmap);
  const std::size_t H = heatmap.dim(0), W = heatmap.dim(1), N = heatmap.dim(2);
  auto at = [&](std::size_t v, std::size_t u, std::size_t n) { return heatmap[(v * W + u) * N + n]; };
  std::vector<Point2> out;
  for (std::size_t n = 0; n < N; ++n) {
    const auto [u, v] = peaks[n];
    double du = 0, dv = 0;
    if (u > 0 && u + 1 < W) du = log_parabola_offset(at(v, u - 1, n), at(v, u, n), at(v, u + 1, n));
    if (v > 0 && v + 1 < H) dv = log_parabola_offset(at(v - 1, u, n), at(v, u, n), at(v + 1, u, n));
    out.push_back({(u + du + 0.5) / W, (v + dv + 0.5) / H});
  }
  return out;
}

Decoder parse_decoder(const std::string& name) {
  if (name == "argmax") return Decoder::argmax;
  if (name == "refined") return Decoder::refined;
  throw ConfigError("unknown decoder '" + name + "' (expected argmax or refined)");
}

const char* decoder_name(Decoder d) { return d == Decoder::argmax ? "argmax" : "refined"; }

std::vector<Point2> decode(const Tensor& heatmap, Decoder decoder) {
  return decoder == Decoder::argmax ? decode_landmarks(heatmap) : decode_landmarks_refined(heatmap);
}

void NEReport::write_table(std::ostream& os) const {
  std::size_t width = 8;
  for (const auto& n : names) width = std::max(width, n.size());
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s %10s %8s\n", static_cast<int>(width), "landmark", "NE", "count");
  os << buf;
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-*s %10.6f %8zu\n", static_cast<int>(width), names[i].c_str(), per_landmark[i],
                  counts[i]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %10.6f %8zu\n", static_cast<int>(width), "average", average, samples);
  os << buf;
  if (!config.empty()) os << "# " << config << "\n";
}

void NEReport::write_csv(std::ostream& os) const {
  os << "landmark,ne,count\n";
  char buf[64];
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g", per_landmark[i]);
    os << names[i] << "," << buf << "," << counts[i] << "\n";
  }
  std::snprintf(buf, sizeof buf, "%.10g", average);
  os << "average," << buf << "," << samples << "\n";
}

NEReport normalized_error(const std::vector<Prediction>& predictions, const std::vector<SceneAnnotation>& truth,
                          const std::vector<std::string>& names) {
  if (predictions.size() != truth.size()) {
    throw DimensionError("got " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(truth.size()) + " annotations");
  }
  NEReport r;
  r.names = names;
  r.per_landmark.assign(names.size(), 0.0);
  r.counts.assign(names.size(), 0);
  r.samples = truth.size();
  for (std::size_t s = 0; s < truth.size(); ++s) {
    if (predictions[s].size() != names.size()) {
      throw DimensionError("prediction " + std::to_string(s) + " has " + std::to_string(predictions[s].size()) +
                           " points, expected " + std::to_string(names.size()));
    }
    std::map<std::string, const Landmark*> by_name;
    for (const Landmark& l : truth[s].landmarks) by_name[l.name] = &l;
    for (std::size_t n = 0; n < names.size(); ++n) {
      const auto it = by_name.find(names[n]);
      if (it == by_name.end()) {
        throw ValidationError("annotation '" + truth[s].id + "' has no landmark named '" + names[n] + "'");
      }
      const Landmark& gt = *it->second;
      if (!gt.visible) continue;
      r.per_landmark[n] += std::hypot(predictions[s][n].x - gt.x, predictions[s][n].y - gt.y);
      ++r.counts[n];
    }
  }
  std::size_t scored = 0;
  for (std::size_t n = 0; n < names.size(); ++n) {
    if (r.counts[n] == 0) continue;
    r.per_landmark[n] /= static_cast<double>(r.counts[n]);
    r.average += r.per_landmark[n];
    ++scored;
  }
  if (scored > 0) r.average /= static_cast<double>(scored);
  return r;
}

std::vector<Tensor> predict_heatmaps(const Model& model, const std::vector<Tensor>& images, std::size_t batch_size) {
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  std::vector<Tensor> out;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t B = std::min(batch_size, images.size() - start);
    const Shape& s = images[start].shape();
    Tensor batch({B, s[0], s[1], s[2]});
    const std::size_t per = images[start].size();
    for (std::size_t b = 0; b < B; ++b) {
      if (images[start + b].shape() != s) throw DimensionError("images in a batch must share one shape");
      std::copy_n(images[start + b].data().begin(), per, batch.data().begin() + b * per);
    }
    const Tensor h = model.predict(batch);
    const Shape hs{h.dim(1), h.dim(2), h.dim(3)};
    const std::size_t hper = shape_numel(hs);
    for (std::size_t b = 0; b < B; ++b) {
      Tensor one(hs);
      std::copy_n(h.data().begin() + b * hper, hper, one.data().begin());
      out.push_back(std::move(one));
    }
  }
  return out;
}

std::vector<Prediction> predict_landmarks(const Model& model, const std::vector<Tensor>& images, Decoder decoder,
                                          std::size_t batch_size) {
  std::vector<Prediction> out;
  for (const Tensor& h : predict_heatmaps(model, images, batch_size)) out.push_back(decode(h, decoder));
  return out;
}

NEReport evaluate(const Model& model, const Dataset& data, Decoder decoder, std::size_t batch_size) {
  if (data.size() == 0) throw ValidationError("empty dataset");
  for (const SceneAnnotation& a : data.annotations) validate(a, model.graph);
  NEReport r = normalized_error(predict_landmarks(model, data.images, decoder, batch_size), data.annotations,
                                model.graph.leaf_names());
  r.config = std::string("decoder=") + decoder_name(decoder) + " hierarchy=" + model.config.hierarchy +
             " stacks=" + std::to_string(model.config.num_stacks) +
             " clustering_depth=" + std::to_string(model.config.clustering_depth);
  return r;
}

Tensor heatmap_channel_image(const Tensor& heatmap, std::size_t channel) {
  const std::size_t H = heatmap.dim(0), W = heatmap.dim(1), N = heatmap.dim(2);
  if (channel >= N) throw ArgumentError("channel " + std::to_string(channel) + " out of range");
  Tensor img({H, W, 1});
  for (std::size_t i = 0; i < H * W; ++i) img[i] = heatmap[i * N + channel];
  return img;
}

Tensor overlay_landmarks(const Tensor& image, const std::vector<Point2>& points, std::size_t scale) {
  const std::size_t H = image.dim(0) * scale, W = image.dim(1) * scale;
  Tensor out({H, W, 3});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y / scale, x / scale, c);
  const double radius = 1.5 * static_cast<double>(scale);
  for (std::size_t i = 0; i < points.size(); ++i) {
    // Distinct hue per landmark; the ring is one output pixel thick.
    const double hue = static_cast<double>(i) / std::max<std::size_t>(points.size(), 1);
    const double rgb[3] = {0.5 + 0.5 * std::cos(6.2832 * hue), 0.5 + 0.5 * std::cos(6.2832 * (hue - 1.0 / 3)),
                           0.5 + 0.5 * std::cos(6.2832 * (hue - 2.0 / 3))};
    const double cx = points[i].x * W, cy = points[i].y * H;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
        if (std::abs(d - radius) <= 0.5)
          for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = rgb[c];
      }
  }
  return out;
}

void export_heatmaps(const Tensor& image, const Tensor& heatmap, const std::vector<std::string>& names,
                     const std::string& dir, const std::string& stem, std::size_t overlay_scale) {
  namespace fs = std::filesystem;
  if (names.size() != heatmap.dim(2)) throw DimensionError("one name per heatmap channel is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  for (std::size_t n = 0; n < names.size(); ++n) {
    write_image((fs::path(dir) / (stem + "_" + names[n] + ".png")).string(), heatmap_channel_image(heatmap, n));
  }
  write_image((fs::path(dir) / (stem + "_overlay.png")).string(),
              overlay_landmarks(image, decode_landmarks(heatmap), overlay_scale));
}

}  // namespace lgr
