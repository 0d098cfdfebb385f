#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>

#include "lgr/errors.hpp"
#include "lgr/eval.hpp"
#include "lgr/experiment.hpp"
#include "lgr/gradient_suite.hpp"
#include "lgr/synth.hpp"
#include "lgr/training.hpp"

namespace py = pybind11;

namespace {

using lgr::Tensor;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Tensor from_numpy(const Array& a) {
  lgr::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> points_to_numpy(const std::vector<lgr::Point2>& points) {
  py::array_t<double> a({static_cast<py::ssize_t>(points.size()), py::ssize_t{2}});
  auto v = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < points.size(); ++i) {
    v(i, 0) = points[i].x;
    v(i, 1) = points[i].y;
  }
  return a;
}

py::dict annotation_to_dict(const lgr::SceneAnnotation& s) {
  py::list landmarks;
  for (const lgr::Landmark& l : s.landmarks) {
    landmarks.append(py::dict(py::arg("name") = l.name, py::arg("x") = l.x, py::arg("y") = l.y,
                              py::arg("visible") = l.visible));
  }
  return py::dict(py::arg("id") = s.id, py::arg("width") = s.width, py::arg("height") = s.height,
                  py::arg("landmarks") = landmarks, py::arg("occluded") = s.tags.occluded,
                  py::arg("distractor_present") = s.tags.distractor_present,
                  py::arg("clutter_level") = s.tags.clutter_level);
}

py::dict report_to_dict(const lgr::NEReport& r) {
  py::dict per_landmark;
  for (std::size_t i = 0; i < r.names.size(); ++i) per_landmark[py::str(r.names[i])] = r.per_landmark[i];
  return py::dict(py::arg("average") = r.average, py::arg("per_landmark") = per_landmark,
                  py::arg("counts") = r.counts, py::arg("samples") = r.samples);
}

/// An experiment configuration edited through the same keys as config files.
struct PyExperiment {
  lgr::ExperimentConfig cfg;

  void set(const std::string& key, const py::object& value) {
    std::string text;
    if (py::isinstance<py::bool_>(value)) {
      text = value.cast<bool>() ? "true" : "false";
    } else if (py::isinstance<py::list>(value) || py::isinstance<py::tuple>(value)) {
      for (const py::handle item : value) text += (text.empty() ? "" : ",") + py::str(item).cast<std::string>();
    } else {
      text = py::str(value).cast<std::string>();
    }
    lgr::ExperimentConfig next = cfg;
    lgr::apply_options(next, {{key, text, 0}});
    cfg = std::move(next);
  }
};

/// A model together with the experiment that defines it, so it can be saved.
struct PyModel {
  lgr::ExperimentConfig cfg;
  lgr::Model model;
};

PyModel load_model(const std::string& path) {
  return {lgr::parse_experiment(lgr::read_checkpoint(path).config_text), lgr::load_model(path)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Layout-graph reasoning landmark detector (C++ core)";

  py::register_exception<lgr::DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<lgr::ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<lgr::ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<lgr::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<lgr::IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<lgr::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<PyExperiment>(m, "Experiment", "Model, training and synthetic-data settings.")
      .def(py::init([](const std::string& text) { return PyExperiment{lgr::parse_experiment(text)}; }),
           py::arg("text") = "", "Parse `key = value` lines; unset keys keep their defaults.")
      .def_static("load", [](const std::string& path) { return PyExperiment{lgr::load_experiment(path)}; })
      .def("set", &PyExperiment::set, py::arg("key"), py::arg("value"),
           "Set one option by its config-file key; the experiment is unchanged on error.")
      .def("validate", [](const PyExperiment& e) { lgr::validate(e.cfg); })
      .def("to_text", [](const PyExperiment& e) { return lgr::experiment_to_text(e.cfg); })
      .def("__repr__", [](const PyExperiment& e) { return "Experiment(\n" + lgr::experiment_to_text(e.cfg) + ")"; });

  py::class_<lgr::Dataset>(m, "Dataset", "Images with their landmark annotations.")
      .def("__len__", &lgr::Dataset::size)
      .def("image", [](const lgr::Dataset& d, std::size_t i) { return to_numpy(d.images.at(i)); })
      .def("images", [](const lgr::Dataset& d) {
        std::vector<const Tensor*> ptrs;
        for (const Tensor& t : d.images) ptrs.push_back(&t);
        return ptrs.empty() ? py::array_t<double>(0) : to_numpy(lgr::stack_images(ptrs));
      }, "All images as one [N, S, S, 3] array.")
      .def("annotation", [](const lgr::Dataset& d, std::size_t i) { return annotation_to_dict(d.annotations.at(i)); })
      .def("landmarks", [](const lgr::Dataset& d) {
        const std::size_t k = d.size() ? d.annotations[0].landmarks.size() : 0;
        py::array_t<double> a({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(k), py::ssize_t{3}});
        auto v = a.mutable_unchecked<3>();
        for (std::size_t i = 0; i < d.size(); ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const lgr::Landmark& l = d.annotations[i].landmarks.at(j);
            v(i, j, 0) = l.x;
            v(i, j, 1) = l.y;
            v(i, j, 2) = l.visible ? 1.0 : 0.0;
          }
        }
        return a;
      }, "Normalized (x, y, visible) per image and landmark as an [N, K, 3] array.");

  m.def("generate_split", [](const PyExperiment& e, const std::string& split) {
    lgr::validate(e.cfg.synth);
    const lgr::LayoutGraph graph = lgr::build_hierarchy(lgr::hierarchy_by_name(e.cfg.synth.hierarchy));
    return lgr::generate_split(e.cfg.synth, graph, split);
  }, py::arg("experiment"), py::arg("split"), "Render one synthetic split (train, val or test) in memory.");
  m.def("generate_dataset", [](const PyExperiment& e, const std::string& dir) {
    lgr::generate_dataset(e.cfg.synth, dir);
  }, py::arg("experiment"), py::arg("directory"), "Write all synthetic splits as PNG images plus annotations.");
  m.def("load_split", &lgr::load_split, py::arg("directory"), py::arg("split"));

  py::class_<PyModel>(m, "Model", "A landmark detector with its parameters.")
      .def(py::init([](const PyExperiment& e, std::uint64_t seed) {
        lgr::validate(e.cfg);
        return PyModel{e.cfg, lgr::Model(e.cfg.model, seed)};
      }), py::arg("experiment"), py::arg("seed") = 1, "Freshly initialized model.")
      .def_static("load", &load_model, py::arg("path"))
      .def("save", [](const PyModel& pm, const std::string& path) {
        lgr::write_checkpoint(path, lgr::make_checkpoint(pm.model.params, nullptr, lgr::experiment_to_text(pm.cfg)));
      }, py::arg("path"))
      .def("predict", [](const PyModel& pm, const Array& images) {
        return to_numpy(pm.model.predict(from_numpy(images)));
      }, py::arg("images"), "Heatmaps [B, H, W, K] for images [B, S, S, 3].")
      .def("predict_landmarks", [](const PyModel& pm, const Array& images, const std::string& decoder) {
        const Tensor heatmaps = pm.model.predict(from_numpy(images));
        const std::size_t b = heatmaps.shape()[0], h = heatmaps.shape()[1], w = heatmaps.shape()[2],
                          k = heatmaps.shape()[3];
        py::array_t<double> out({static_cast<py::ssize_t>(b), static_cast<py::ssize_t>(k), py::ssize_t{2}});
        double* dst = out.mutable_data();
        const lgr::Decoder dec = lgr::parse_decoder(decoder);
        for (std::size_t i = 0; i < b; ++i) {
          const auto first = heatmaps.data().begin() + static_cast<std::ptrdiff_t>(i * h * w * k);
          const Tensor one({h, w, k}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(h * w * k)));
          for (const lgr::Point2& p : lgr::decode(one, dec)) {
            *dst++ = p.x;
            *dst++ = p.y;
          }
        }
        return out;
      }, py::arg("images"), py::arg("decoder") = "refined", "Normalized (x, y) per image and landmark.")
      .def_property_readonly("landmark_names", [](const PyModel& pm) { return pm.model.graph.leaf_names(); })
      .def_property_readonly("parameter_count", [](const PyModel& pm) { return lgr::parameter_count(pm.model.params); })
      .def_property_readonly("experiment", [](const PyModel& pm) { return PyExperiment{pm.cfg}; })
      .def("parameters", [](const PyModel& pm) {
        py::dict out;
        lgr::for_each_weight(pm.model.params, [&](const std::string& name, const Tensor& t) {
          out[py::str(name)] = to_numpy(t);
        });
        return out;
      }, "Copies of all parameter tensors by name.");

  m.def("decode_landmarks", [](const Array& heatmap) { return points_to_numpy(lgr::decode_landmarks(from_numpy(heatmap))); },
        py::arg("heatmap"), "Per-channel argmax of an [H, W, K] heatmap as normalized (x, y) cell centres.");
  m.def("decode_landmarks_refined",
        [](const Array& heatmap) { return points_to_numpy(lgr::decode_landmarks_refined(from_numpy(heatmap))); },
        py::arg("heatmap"), "Argmax refined to sub-cell precision by a log-parabola fit.");

  m.def("evaluate", [](const PyModel& pm, const lgr::Dataset& data, const std::string& decoder) {
    return report_to_dict(lgr::evaluate(pm.model, data, lgr::parse_decoder(decoder)));
  }, py::arg("model"), py::arg("dataset"), py::arg("decoder") = "refined",
        "Normalized error report: average, per_landmark, counts and samples.");

  m.def("train", [](const PyExperiment& e, const lgr::Dataset& train_set, const lgr::Dataset& val_set,
                    const std::string& checkpoint_path, const std::string& metrics_path,
                    std::function<void(py::dict)> on_epoch) {
    lgr::validate(e.cfg);
    lgr::TrainOutputs outputs;
    outputs.checkpoint_path = checkpoint_path;
    outputs.metrics_path = metrics_path;
    outputs.config_text = lgr::experiment_to_text(e.cfg);
    if (on_epoch) {
      outputs.on_epoch = [&](const lgr::EpochMetrics& mt) {
        on_epoch(py::dict(py::arg("epoch") = mt.epoch, py::arg("lr") = mt.lr, py::arg("train_loss") = mt.train_loss,
                          py::arg("val_ne") = mt.val_ne));
      };
    }
    const lgr::TrainResult r = lgr::train(train_set, val_set, e.cfg.model, e.cfg.train, outputs);
    py::list log;
    for (const lgr::EpochMetrics& mt : r.log) {
      log.append(py::dict(py::arg("epoch") = mt.epoch, py::arg("lr") = mt.lr, py::arg("train_loss") = mt.train_loss,
                          py::arg("val_ne") = mt.val_ne));
    }
    py::dict summary(py::arg("best_epoch") = r.best_epoch, py::arg("best_val_ne") = r.best_val_ne,
                     py::arg("steps") = r.steps, py::arg("initial_orthogonality") = r.initial_orthogonality,
                     py::arg("best_orthogonality") = r.best_orthogonality, py::arg("log") = log);
    return py::make_tuple(PyModel{e.cfg, lgr::Model(e.cfg.model, r.best_params)}, summary);
  }, py::arg("experiment"), py::arg("train_set"), py::arg("val_set"), py::arg("checkpoint_path") = "",
        py::arg("metrics_path") = "", py::arg("on_epoch") = nullptr,
        "Train with Adam and early stopping; returns (best model, summary).");

  m.def("gradient_suite_ops", &lgr::gradient_suite_ops);
  m.def("gradient_suite", [](const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& ops) {
    py::list out;
    for (const lgr::GradientCase& c : lgr::run_gradient_suite(seeds, ops)) {
      out.append(py::dict(py::arg("op") = c.op, py::arg("seed") = c.seed, py::arg("worst") = c.report.worst,
                          py::arg("max_abs_grad") = c.report.max_abs_grad,
                          py::arg("coords_checked") = c.report.coords_checked, py::arg("attempts") = c.attempts));
    }
    return out;
  }, py::arg("seeds") = std::vector<std::uint64_t>{1, 2, 3, 4, 5}, py::arg("ops") = std::vector<std::string>{},
        "Finite-difference gradient checks; `worst` is the largest relative error per case.");
}
