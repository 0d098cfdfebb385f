#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "lgr/model.hpp"
#include "lgr/synth.hpp"
#include "lgr/tensor.hpp"

namespace lgr {

struct Point2 {
  double x = 0.0, y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Per channel of an [H x W x N] heatmap: the argmax cell (first in row-major
/// order on ties) as ((u + 0.5) / W, (v + 0.5) / H).
std::vector<Point2> decode_landmarks(const Tensor& heatmap);

/// Argmax followed by a per-axis parabola fit to the log of the peak and its
/// two neighbours; exact for Gaussian peaks away from the border.
std::vector<Point2> decode_landmarks_refined(const Tensor& heatmap);

enum class Decoder { argmax, refined };
Decoder parse_decoder(const std::string& name);
const char* decoder_name(Decoder d);
std::vector<Point2> decode(const Tensor& heatmap, Decoder decoder);

struct NEReport {
  std::vector<std::string> names;    // hierarchy leaf order
  std::vector<double> per_landmark;  // mean NE over samples where that landmark is visible
  std::vector<std::size_t> counts;   // visible samples per landmark
  double average = 0.0;              // mean of per_landmark over landmarks with counts > 0
  std::size_t samples = 0;
  std::string config;  // free-form echo of what produced the report

  void write_table(std::ostream& os) const;
  void write_csv(std::ostream& os) const;

  friend bool operator==(const NEReport&, const NEReport&) = default;
};

/// Predictions for one image, named and ordered like the annotation landmarks.
using Prediction = std::vector<Point2>;

/// Euclidean distance in normalized coordinates, averaged per landmark name over
/// samples where the ground truth is visible, then over names. Throws
/// ValidationError when an annotation lacks a leaf name.
NEReport normalized_error(const std::vector<Prediction>& predictions, const std::vector<SceneAnnotation>& truth,
                          const std::vector<std::string>& names);

/// Batched inference over a dataset.
std::vector<Tensor> predict_heatmaps(const Model& model, const std::vector<Tensor>& images, std::size_t batch_size);
std::vector<Prediction> predict_landmarks(const Model& model, const std::vector<Tensor>& images, Decoder decoder,
                                          std::size_t batch_size);

/// Throws ValidationError on an empty dataset or when annotations do not fit the model hierarchy.
NEReport evaluate(const Model& model, const Dataset& data, Decoder decoder, std::size_t batch_size = 16);

/// Writes <dir>/<stem>_<leaf>.png (round(255 h) per cell) and <dir>/<stem>_overlay.png
/// (the image upscaled by `overlay_scale` with a circle at every decoded landmark).
void export_heatmaps(const Tensor& image, const Tensor& heatmap, const std::vector<std::string>& names,
                     const std::string& dir, const std::string& stem, std::size_t overlay_scale = 4);

/// Heatmap channel as a [H x W x 1] grayscale image.
Tensor heatmap_channel_image(const Tensor& heatmap, std::size_t channel);
/// The image upscaled by `scale` (nearest) with a ring drawn at every point.
Tensor overlay_landmarks(const Tensor& image, const std::vector<Point2>& points, std::size_t scale);

}  // namespace lgr
