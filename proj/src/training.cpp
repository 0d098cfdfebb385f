#include "lgr/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "lgr/config.hpp"
#include "lgr/errors.hpp"
#include "lgr/ops.hpp"

namespace lgr {
namespace {

constexpr char kMagic[8] = {'L', 'G', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint64_t kAugmentStream = std::uint64_t{1} << 40;

std::vector<Tensor*> weight_pointers(ModelParams& p) {
  std::vector<Tensor*> out;
  for_each_weight(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<std::string> weight_names(const ModelParams& p) {
  std::vector<std::string> out;
  for_each_weight(p, [&](const std::string& name, const Tensor&) { out.push_back(name); });
  return out;
}

double sample_bilinear(const Tensor& img, double x, double y, std::size_t c) {
  const double maxx = static_cast<double>(img.dim(1) - 1), maxy = static_cast<double>(img.dim(0) - 1);
  x = std::clamp(x, 0.0, maxx);
  y = std::clamp(y, 0.0, maxy);
  const auto x0 = static_cast<std::size_t>(std::floor(x)), y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min<std::size_t>(x0 + 1, img.dim(1) - 1), y1 = std::min<std::size_t>(y0 + 1, img.dim(0) - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
  const double bottom = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
  return top * (1 - fy) + bottom * fy;
}

// Little-endian binary helpers.
template <class T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw IoError("truncated checkpoint '" + path + "'");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

std::string get_string(std::istream& is, std::uint64_t n, const std::string& path) {
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 30;
  if (n > kLimit) throw IoError("corrupt checkpoint '" + path + "': implausible length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated checkpoint '" + path + "'");
  return s;
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(cfg.lr0 > 0)) throw ConfigError("lr0 must be positive");
  if (!(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1)) throw ConfigError("Adam betas must be in [0, 1)");
  if (!(cfg.adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  if (!(cfg.drop_factor > 0)) throw ConfigError("drop_factor must be positive");
  if (cfg.drop_every == 0) throw ConfigError("drop_every must be at least 1");
  if (!(cfg.aug_scale_min > 0 && cfg.aug_scale_min <= cfg.aug_scale_max)) {
    throw ConfigError("augmentation scale range must satisfy 0 < aug_scale_min <= aug_scale_max");
  }
  if (!(cfg.hflip_prob >= 0 && cfg.hflip_prob <= 1)) throw ConfigError("hflip_prob must be in [0, 1]");
  if (!(cfg.heatmap_sigma > 0)) throw ConfigError("heatmap_sigma must be positive");
  if (!(cfg.target_ne >= 0)) throw ConfigError("target_ne must be non-negative");
}

bool set_train_option(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "batch_size") cfg.batch_size = parse_size(key, value);
  else if (key == "lr0") cfg.lr0 = parse_double(key, value);
  else if (key == "beta1") cfg.beta1 = parse_double(key, value);
  else if (key == "beta2") cfg.beta2 = parse_double(key, value);
  else if (key == "adam_eps") cfg.adam_eps = parse_double(key, value);
  else if (key == "drop_factor") cfg.drop_factor = parse_double(key, value);
  else if (key == "drop_every") cfg.drop_every = parse_size(key, value);
  else if (key == "epochs") cfg.epochs = parse_size(key, value);
  else if (key == "max_steps") cfg.max_steps = parse_size(key, value);
  else if (key == "patience") cfg.patience = parse_size(key, value);
  else if (key == "target_ne") cfg.target_ne = parse_double(key, value);
  else if (key == "augment") cfg.augment = parse_bool(key, value);
  else if (key == "aug_scale_min") cfg.aug_scale_min = parse_double(key, value);
  else if (key == "aug_scale_max") cfg.aug_scale_max = parse_double(key, value);
  else if (key == "aug_rotation_deg") cfg.aug_rotation_deg = parse_double(key, value);
  else if (key == "hflip_prob") cfg.hflip_prob = parse_double(key, value);
  else if (key == "heatmap_sigma") cfg.heatmap_sigma = parse_double(key, value);
  else if (key == "decoder") cfg.decoder = parse_decoder(value);
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else return false;
  return true;
}

void write_train_options(const TrainConfig& cfg, std::ostream& os) {
  os << "batch_size = " << cfg.batch_size << "\n"
     << "lr0 = " << format_double(cfg.lr0) << "\n"
     << "beta1 = " << format_double(cfg.beta1) << "\n"
     << "beta2 = " << format_double(cfg.beta2) << "\n"
     << "adam_eps = " << format_double(cfg.adam_eps) << "\n"
     << "drop_factor = " << format_double(cfg.drop_factor) << "\n"
     << "drop_every = " << cfg.drop_every << "\n"
     << "epochs = " << cfg.epochs << "\n"
     << "max_steps = " << cfg.max_steps << "\n"
     << "patience = " << cfg.patience << "\n"
     << "target_ne = " << format_double(cfg.target_ne) << "\n"
     << "augment = " << (cfg.augment ? "true" : "false") << "\n"
     << "aug_scale_min = " << format_double(cfg.aug_scale_min) << "\n"
     << "aug_scale_max = " << format_double(cfg.aug_scale_max) << "\n"
     << "aug_rotation_deg = " << format_double(cfg.aug_rotation_deg) << "\n"
     << "hflip_prob = " << format_double(cfg.hflip_prob) << "\n"
     << "heatmap_sigma = " << format_double(cfg.heatmap_sigma) << "\n"
     << "decoder = " << decoder_name(cfg.decoder) << "\n"
     << "seed = " << cfg.seed << "\n";
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 / std::pow(cfg.drop_factor, static_cast<double>(epoch / cfg.drop_every));
}

Var total_loss(const Var& heatmaps, const Var& target, const ModelVars& w, const LayoutGraph& graph,
               const ModelConfig& cfg) {
  Var loss = ops::mse(heatmaps, target);
  if (cfg.lambda_orth == 0.0) return loss;
  return ops::add(loss, ops::scale(orthogonality_total(w, graph, cfg), cfg.lambda_orth));
}

void adam_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               const TrainConfig& cfg) {
  if (grads.size() != params.size()) {
    throw ContractError("adam_step got " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ContractError("Adam state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape()) {
      throw ContractError("missing or misshapen gradient for parameter " + std::to_string(i) + " " +
                          shape_str(params[i]->shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
    }
  }
}

AugmentParams sample_augment(Rng& rng, const TrainConfig& cfg) {
  AugmentParams p;
  p.scale = rng.uniform(cfg.aug_scale_min, cfg.aug_scale_max);
  const double max_angle = cfg.aug_rotation_deg * M_PI / 180.0;
  p.angle = rng.uniform(-max_angle, max_angle);
  p.flip = rng.bernoulli(cfg.hflip_prob);
  return p;
}

Sample apply_augment(const Sample& s, const AugmentParams& p, const std::vector<std::size_t>& mirror) {
  if (mirror.size() != s.landmarks.size()) throw DimensionError("mirror permutation does not match the landmarks");
  if (p.scale == 1.0 && p.angle == 0.0 && !p.flip) return s;
  const double cs = std::cos(p.angle), sn = std::sin(p.angle);
  const double fx = p.flip ? -1.0 : 1.0;
  Sample out;
  const std::size_t H = s.image.dim(0), W = s.image.dim(1), C = s.image.dim(2);
  out.image = Tensor(s.image.shape());
  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      // Inverse map: undo rotation and scale, then the flip.
      const double dx = x - cx, dy = y - cy;
      const double rx = (cs * dx + sn * dy) / p.scale, ry = (-sn * dx + cs * dy) / p.scale;
      for (std::size_t c = 0; c < C; ++c) out.image.at(y, x, c) = sample_bilinear(s.image, cx + fx * rx, cy + ry, c);
    }
  out.landmarks.resize(s.landmarks.size());
  for (std::size_t i = 0; i < s.landmarks.size(); ++i) {
    const Landmark& src = s.landmarks[p.flip ? mirror[i] : i];
    const double dx = fx * (src.x - 0.5), dy = src.y - 0.5;
    Landmark& l = out.landmarks[i];
    l.name = s.landmarks[i].name;
    l.x = 0.5 + p.scale * (cs * dx - sn * dy);
    l.y = 0.5 + p.scale * (sn * dx + cs * dy);
    l.visible = src.visible && l.x >= 0 && l.x <= 1 && l.y >= 0 && l.y <= 1;
  }
  return out;
}

Sample augment(const Sample& s, Rng& rng, const TrainConfig& cfg, const std::vector<std::size_t>& mirror) {
  return apply_augment(s, sample_augment(rng, cfg), mirror);
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.step);
  put<std::uint64_t>(out, ckpt.config_text.size());
  out.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
  put<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, t.rank());
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  c.step = get<std::uint64_t>(in, path);
  c.config_text = get_string(in, get<std::uint64_t>(in, path), path);
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(in, get<std::uint64_t>(in, path), path);
    const auto rank = get<std::uint64_t>(in, path);
    if (rank > 8) throw IoError("corrupt checkpoint '" + path + "': tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    Tensor t(shape);
    for (double& v : t.data()) v = std::bit_cast<float>(get<std::uint32_t>(in, path));
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

Checkpoint make_checkpoint(const ModelParams& params, const AdamState* adam, const std::string& config_text) {
  Checkpoint c;
  c.config_text = config_text;
  for_each_weight(params, [&](const std::string& name, const Tensor& t) { c.tensors.emplace_back(name, t); });
  if (adam && !adam->m.empty()) {
    c.step = adam->step;
    const auto names = weight_names(params);
    for (std::size_t i = 0; i < names.size(); ++i) c.tensors.emplace_back("adam.m/" + names[i], adam->m.at(i));
    for (std::size_t i = 0; i < names.size(); ++i) c.tensors.emplace_back("adam.v/" + names[i], adam->v.at(i));
  }
  return c;
}

ModelParams params_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg, const LayoutGraph& graph) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  ModelParams p = init_params(cfg, graph, 0);
  for_each_weight(p, [&](const std::string& name, Tensor& t) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("checkpoint lacks parameter '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw ValidationError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second->shape()) +
                            ", the model needs " + shape_str(t.shape()));
    }
    t = *it->second;
    t.set_requires_grad(true);
  });
  return p;
}

void round_to_checkpoint_precision(ModelParams& params) {
  for_each_weight(params, [](const std::string&, Tensor& t) {
    for (double& v : t.data()) v = static_cast<float>(v);
  });
}

std::string format_metrics_line(const EpochMetrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g", m.epoch, m.lr, m.train_loss, m.val_ne);
  return buf;
}

double orthogonality_value(const ModelParams& params, const LayoutGraph& graph, const ModelConfig& cfg) {
  ModelParams frozen = params;
  for_each_weight(frozen, [](const std::string&, Tensor& t) { t.set_requires_grad(false); });
  Tape tape;
  return orthogonality_total(bind(tape, frozen), graph, cfg).value().item();
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw DimensionError("cannot stack an empty batch");
  const Shape& s = images.front()->shape();
  Shape out_shape{images.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out(out_shape);
  const std::size_t per = images.front()->size();
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->shape() != s) throw DimensionError("images in a batch must share one shape");
    std::copy_n(images[b]->data().begin(), per, out.data().begin() + b * per);
  }
  return out;
}

Tensor target_heatmaps(const std::vector<const std::vector<Landmark>*>& landmarks, std::size_t size, double sigma) {
  std::vector<Tensor> maps;
  for (const auto* l : landmarks) maps.push_back(render_heatmaps(*l, size, size, sigma));
  std::vector<const Tensor*> ptrs;
  for (const Tensor& m : maps) ptrs.push_back(&m);
  return stack_images(ptrs);
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainOutputs& outputs) {
  const LayoutGraph graph = build_hierarchy(hierarchy_by_name(model_cfg.hierarchy));
  return train(train_set, val_set, model_cfg, cfg, init_params(model_cfg, graph, cfg.seed), outputs);
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, ModelParams params, const TrainOutputs& outputs) {
  validate(cfg);
  const LayoutGraph graph = build_hierarchy(hierarchy_by_name(model_cfg.hierarchy));
  validate(model_cfg, graph);
  if (train_set.size() == 0) throw ValidationError("empty dataset");
  for (const Dataset* d : {&train_set, &val_set}) {
    for (std::size_t i = 0; i < d->size(); ++i) {
      validate(d->annotations[i], graph);
      if (d->images[i].shape() != Shape{model_cfg.input_size, model_cfg.input_size, 3}) {
        throw ValidationError("image '" + d->annotations[i].id + "' is " + shape_str(d->images[i].shape()) +
                              ", the model expects " + std::to_string(model_cfg.input_size) + "x" +
                              std::to_string(model_cfg.input_size) + "x3");
      }
    }
  }
  const Dataset& selection_set = val_set.size() ? val_set : train_set;
  const std::vector<std::size_t> mirror = graph.mirror_permutation();
  const std::size_t feature = model_cfg.feature_size();

  std::ofstream metrics;
  if (!outputs.metrics_path.empty()) {
    metrics.open(outputs.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics log '" + outputs.metrics_path + "'");
    metrics << "epoch,lr,train_loss,val_NE\n" << std::flush;
  }
  auto save = [&](const TrainResult& r) {
    if (outputs.checkpoint_path.empty()) return;
    write_checkpoint(outputs.checkpoint_path, make_checkpoint(r.best_params, &r.best_adam, outputs.config_text));
  };

  TrainResult result;
  result.initial_orthogonality = orthogonality_value(params, graph, model_cfg);
  result.best_params = params;
  round_to_checkpoint_precision(result.best_params);
  result.best_orthogonality = result.initial_orthogonality;
  result.best_val_ne = std::numeric_limits<double>::infinity();
  AdamState adam;
  const std::vector<Tensor*> weights = weight_pointers(params);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && result.steps >= cfg.max_steps) break;
    const double lr = lr_schedule(epoch, cfg);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::derive(cfg.seed, epoch));
    shuffle_rng.shuffle(order);
    Rng aug_rng(Rng::derive(cfg.seed, kAugmentStream + epoch));

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && result.steps >= cfg.max_steps) break;
      const std::size_t B = std::min(cfg.batch_size, order.size() - start);
      std::vector<Sample> samples;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t i = order[start + b];
        Sample s{train_set.images[i], train_set.annotations[i].landmarks};
        samples.push_back(cfg.augment ? augment(s, aug_rng, cfg, mirror) : std::move(s));
      }
      std::vector<const Tensor*> imgs;
      std::vector<const std::vector<Landmark>*> lms;
      for (const Sample& s : samples) {
        imgs.push_back(&s.image);
        lms.push_back(&s.landmarks);
      }
      Tape tape;
      const ModelVars w = bind(tape, params);
      Var heatmaps = model_forward(tape.constant(stack_images(imgs)), graph, w, model_cfg);
      Var loss = total_loss(heatmaps, tape.constant(target_heatmaps(lms, feature, cfg.heatmap_sigma)), w, graph,
                            model_cfg);
      const double loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(result.steps + 1));
      }
      const Gradients grads = tape.backward(loss);
      std::vector<Tensor> g;
      for_each_weight(w, [&](const std::string&, const Var& v) { g.push_back(grads[v]); });
      adam_step(weights, g, adam, lr, cfg);
      ++result.steps;
      loss_sum += loss_value;
      ++batches;
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    m.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    m.val_ne = evaluate(Model(model_cfg, params), selection_set, cfg.decoder, cfg.batch_size).average;
    result.log.push_back(m);
    if (metrics.is_open()) metrics << format_metrics_line(m) << "\n" << std::flush;
    if (outputs.on_epoch) outputs.on_epoch(m);

    if (m.val_ne < result.best_val_ne) {
      result.best_val_ne = m.val_ne;
      result.best_epoch = m.epoch;
      result.best_params = params;
      round_to_checkpoint_precision(result.best_params);
      result.best_adam = adam;
      result.best_orthogonality = orthogonality_value(result.best_params, graph, model_cfg);
      save(result);
      if (m.val_ne <= cfg.target_ne) break;
    } else if (m.epoch - result.best_epoch >= cfg.patience) {
      break;
    }
  }
  if (result.best_epoch == 0) {
    result.best_val_ne = evaluate(Model(model_cfg, result.best_params), selection_set, cfg.decoder, cfg.batch_size).average;
    save(result);
  }
  return result;
}

}  // namespace lgr
