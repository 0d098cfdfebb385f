#include "lgr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "lgr/errors.hpp"

namespace lgr::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Index = Eigen::Index;

ConstMap cmap(const double* p, std::size_t r, std::size_t c) {
  return ConstMap(p, static_cast<Index>(r), static_cast<Index>(c));
}
MutMap mmap(double* p, std::size_t r, std::size_t c) {
  return MutMap(p, static_cast<Index>(r), static_cast<Index>(c));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1) shape_error(op, a, b);
    out[r - 1 - i] = std::max(ea, eb);
  }
  return out;
}

// Maps every flat index of `out` to the flat index of a trailing-aligned `in`.
// Empty result means the shapes are identical.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t n = shape_numel(out);
  const std::size_t m = shape_numel(in);
  std::vector<std::size_t> idx(n);
  // Common case: `in` equals a trailing block of `out`.
  bool suffix = in.size() <= out.size();
  for (std::size_t i = 0; suffix && i < in.size(); ++i) {
    suffix = in[in.size() - 1 - i] == out[out.size() - 1 - i];
  }
  if (suffix) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = i % m;
    return idx;
  }
  const std::size_t r = out.size();
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t ax = in.size() - 1 - i;
    in_stride[r - 1 - i] = in[ax] == 1 ? 0 : s;
    s *= in[ax];
  }
  std::vector<std::size_t> coord(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++coord[ax];
      off += in_stride[ax];
      if (coord[ax] < out[ax]) break;
      off -= in_stride[ax] * coord[ax];
      coord[ax] = 0;
    }
  }
  return idx;
}

void accumulate_broadcast(Buffer& dst, std::span<const double> g,
                          const std::vector<std::size_t>& idx) {
  if (idx.empty()) {
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) dst[idx[i]] += g[i];
  }
}

// Walks a broadcast of trailing-aligned `in` onto `out` as contiguous runs:
// f(out_offset, in_offset, length). Runs cover the trailing axes where both
// shapes agree.
template <class F>
void for_each_broadcast_run(const Shape& in, const Shape& out, F&& f) {
  const std::size_t r = out.size();
  Shape padded(r, 1);
  std::copy(in.begin(), in.end(), padded.begin() + static_cast<std::ptrdiff_t>(r - in.size()));
  std::size_t split = r;
  std::size_t run = 1;
  while (split > 0 && padded[split - 1] == out[split - 1]) run *= out[--split];
  std::vector<std::size_t> in_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t ax = r; ax-- > 0;) {
    in_stride[ax] = padded[ax] == 1 ? 0 : s;
    s *= padded[ax];
  }
  std::size_t outer = 1;
  for (std::size_t ax = 0; ax < split; ++ax) outer *= out[ax];
  std::vector<std::size_t> coord(split, 0);
  std::size_t in_off = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    f(o * run, in_off, run);
    for (std::size_t ax = split; ax-- > 0;) {
      ++coord[ax];
      in_off += in_stride[ax];
      if (coord[ax] < out[ax]) break;
      in_off -= in_stride[ax] * coord[ax];
      coord[ax] = 0;
    }
  }
}

struct Broadcast {
  Shape out_shape;
  std::shared_ptr<const std::vector<std::size_t>> ia, ib;
  std::size_t a_index(std::size_t i) const { return ia->empty() ? i : (*ia)[i]; }
  std::size_t b_index(std::size_t i) const { return ib->empty() ? i : (*ib)[i]; }
};

Broadcast make_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  bc.out_shape = broadcast_shape(op, a, b);
  bc.ia = std::make_shared<const std::vector<std::size_t>>(broadcast_index(a, bc.out_shape));
  bc.ib = std::make_shared<const std::vector<std::size_t>>(broadcast_index(b, bc.out_shape));
  return bc;
}

// Normalizes an axis spec into (outer, len, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// matmul

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t ra = av.rank(), rb = bv.rank();
  if (ra < 2 || ra > 3 || rb < 2 || rb > 3) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t m = av.dim(ra - 2), k = av.dim(ra - 1);
  const std::size_t kb = bv.dim(rb - 2), n = bv.dim(rb - 1);
  if (k != kb) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t ba = ra == 3 ? av.dim(0) : 1;
  const std::size_t bb = rb == 3 ? bv.dim(0) : 1;
  if (ra == 3 && rb == 3 && ba != bb) shape_error("matmul", av.shape(), bv.shape());
  const std::size_t batch = std::max(ba, bb);

  Shape out_shape = (ra == 3 || rb == 3) ? Shape{batch, m, n} : Shape{m, n};
  Tensor out(out_shape);
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();

  if (rb == 2) {
    // Left batches (if any) flatten into rows.
    mmap(C, ba * m, n).noalias() = cmap(A, ba * m, k) * cmap(B, k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const double* Ai = ra == 3 ? A + i * m * k : A;
      mmap(C + i * m * n, m, n).noalias() = cmap(Ai, m, k) * cmap(B + i * k * n, k, n);
    }
  }

  return a.tape().record(std::move(out), {a, b}, [A, B, ra, rb, ba, batch, m, k, n](BackwardContext& ctx) {
    const double* G = ctx.grad_out.data();
    Buffer* ga = ctx.grad_in[0];
    Buffer* gb = ctx.grad_in[1];
    if (rb == 2) {
      if (ga) mmap(ga->data(), ba * m, k).noalias() += cmap(G, ba * m, n) * cmap(B, k, n).transpose();
      if (gb) mmap(gb->data(), k, n).noalias() += cmap(A, ba * m, k).transpose() * cmap(G, ba * m, n);
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      const double* Ai = ra == 3 ? A + i * m * k : A;
      const double* Gi = G + i * m * n;
      if (ga) {
        double* gai = ra == 3 ? ga->data() + i * m * k : ga->data();
        mmap(gai, m, k).noalias() += cmap(Gi, m, n) * cmap(B + i * k * n, k, n).transpose();
      }
      if (gb) mmap(gb->data() + i * k * n, k, n).noalias() += cmap(Ai, m, k).transpose() * cmap(Gi, m, n);
    }
  });
}

// ---------------------------------------------------------------------------
// activations

Var relu(const Var& x) {
  const Tensor& xv = x.value();
  x.tape().note_relu_inputs(xv.data());
  Tensor out(xv.shape());
  auto o = out.data();
  const auto xd = xv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  const Tensor* xp = &xv;
  return x.tape().record(std::move(out), {x}, [xp](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    const auto xd = xp->data();
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xd[i] > 0.0) g[i] += ctx.grad_out[i];
    }
  });
}

Var sigmoid(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto o = out.data();
  const auto xd = xv.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = xd[i];
    if (v >= 0.0) {
      o[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      o[i] = e / (1.0 + e);
    }
  }
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    const auto y = ctx.output->data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_out[i] * y[i] * (1.0 - y[i]);
  });
}

Var softmax(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (axis >= xv.rank()) {
    throw ArgumentError("softmax: axis " + std::to_string(axis) + " out of range for " +
                        shape_str(xv.shape()));
  }
  const AxisSplit sp = split_axis(xv.shape(), axis);
  Tensor out(xv.shape());
  const double* xd = xv.data().data();
  double* yd = out.data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < sp.len; ++j) mx = std::max(mx, xd[base + j * sp.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.len; ++j) {
        const double e = std::exp(xd[base + j * sp.inner] - mx);
        yd[base + j * sp.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < sp.len; ++j) yd[base + j * sp.inner] /= z;
    }
  }
  return x.tape().record(std::move(out), {x}, [sp](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    const double* y = ctx.output->data().data();
    const double* dy = ctx.grad_out.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.len; ++j) dot += dy[base + j * sp.inner] * y[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.len; ++j) {
          const std::size_t t = base + j * sp.inner;
          g[t] += y[t] * (dy[t] - dot);
        }
      }
    }
  });
}

Var activation(const Var& x, Activation kind, std::size_t axis) {
  switch (kind) {
    case Activation::relu:
      return relu(x);
    case Activation::sigmoid:
      return sigmoid(x);
    case Activation::softmax:
      return softmax(x, axis);
  }
  throw ArgumentError("unknown activation");
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
  const Broadcast bc = make_broadcast("add", a.shape(), b.shape());
  const auto ad = a.value().data();
  const auto bd = b.value().data();
  Tensor out(bc.out_shape);
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[bc.a_index(i)] + bd[bc.b_index(i)];
  return a.tape().record(std::move(out), {a, b}, [bc](BackwardContext& ctx) {
    if (ctx.grad_in[0]) accumulate_broadcast(*ctx.grad_in[0], ctx.grad_out, *bc.ia);
    if (ctx.grad_in[1]) accumulate_broadcast(*ctx.grad_in[1], ctx.grad_out, *bc.ib);
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  const Broadcast bc = make_broadcast("mul", a.shape(), b.shape());
  const Tensor* ap = &a.value();
  const Tensor* bp = &b.value();
  const auto ad = ap->data();
  const auto bd = bp->data();
  Tensor out(bc.out_shape);
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[bc.a_index(i)] * bd[bc.b_index(i)];
  return a.tape().record(std::move(out), {a, b}, [bc, ap, bp](BackwardContext& ctx) {
    const auto ad = ap->data();
    const auto bd = bp->data();
    const auto g = ctx.grad_out;
    if (auto* ga = ctx.grad_in[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[bc.a_index(i)] += g[i] * bd[bc.b_index(i)];
    }
    if (auto* gb = ctx.grad_in[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[bc.b_index(i)] += g[i] * ad[bc.a_index(i)];
    }
  });
}

Var scale(const Var& x, double factor) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto o = out.data();
  const auto xd = xv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] * factor;
  return x.tape().record(std::move(out), {x}, [factor](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * ctx.grad_out[i];
  });
}

Var add_scalar(const Var& x, double c) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto o = out.data();
  const auto xd = xv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] + c;
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_out[i];
  });
}

Var power(const Var& x, double p) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto o = out.data();
  const auto xd = xv.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (!(xd[i] > 0.0)) throw NumericError("power: non-positive base " + std::to_string(xd[i]));
    o[i] = std::pow(xd[i], p);
  }
  const Tensor* xp = &xv;
  return x.tape().record(std::move(out), {x}, [xp, p](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    const auto xd = xp->data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_out[i] * p * std::pow(xd[i], p - 1.0);
  });
}

// ---------------------------------------------------------------------------
// shape manipulation

Var broadcast_to(const Var& x, const Shape& shape) {
  const Shape xs = x.shape();
  if (broadcast_shape("broadcast_to", xs, shape) != shape) shape_error("broadcast_to", xs, shape);
  const double* xd = x.value().data().data();
  Tensor out(shape);
  double* o = out.data().data();
  for_each_broadcast_run(xs, shape, [&](std::size_t oo, std::size_t io, std::size_t n) { std::copy_n(xd + io, n, o + oo); });
  return x.tape().record(std::move(out), {x}, [xs, shape](BackwardContext& ctx) {
    double* g = ctx.grad_in[0]->data();
    const double* go = ctx.grad_out.data();
    for_each_broadcast_run(xs, shape, [&](std::size_t oo, std::size_t io, std::size_t n) {
      for (std::size_t k = 0; k < n; ++k) g[io + k] += go[oo + k];
    });
  });
}

Var concat_last_axis(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 1, bs.begin())) {
    shape_error("concat_last_axis", as, bs);
  }
  const std::size_t ca = as.back(), cb = bs.back();
  const std::size_t rows = shape_numel(as) / ca;
  Shape out_shape = as;
  out_shape.back() = ca + cb;
  Tensor out(out_shape);
  const double* ad = a.value().data().data();
  const double* bd = b.value().data().data();
  double* o = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad + r * ca, ca, o + r * (ca + cb));
    std::copy_n(bd + r * cb, cb, o + r * (ca + cb) + ca);
  }
  return a.tape().record(std::move(out), {a, b}, [rows, ca, cb](BackwardContext& ctx) {
    const double* g = ctx.grad_out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      if (auto* ga = ctx.grad_in[0]) {
        for (std::size_t j = 0; j < ca; ++j) (*ga)[r * ca + j] += g[r * (ca + cb) + j];
      }
      if (auto* gb = ctx.grad_in[1]) {
        for (std::size_t j = 0; j < cb; ++j) (*gb)[r * cb + j] += g[r * (ca + cb) + ca + j];
      }
    }
  });
}

Var transpose(const Var& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 && xs.size() != 3) {
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_str(xs));
  }
  const std::size_t batch = xs.size() == 3 ? xs[0] : 1;
  const std::size_t m = xs[xs.size() - 2], n = xs.back();
  Shape out_shape = xs;
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  Tensor out(out_shape);
  const double* xd = x.value().data().data();
  double* o = out.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    mmap(o + b * m * n, n, m) = cmap(xd + b * m * n, m, n).transpose();
  }
  return x.tape().record(std::move(out), {x}, [batch, m, n](BackwardContext& ctx) {
    const double* g = ctx.grad_out.data();
    double* gx = ctx.grad_in[0]->data();
    for (std::size_t b = 0; b < batch; ++b) {
      mmap(gx + b * m * n, m, n) += cmap(g + b * m * n, n, m).transpose();
    }
  });
}

Var reshape(const Var& x, const Shape& shape) {
  if (shape_numel(shape) != x.value().size()) shape_error("reshape", x.shape(), shape);
  Tensor out = x.value().reshaped(shape);
  out.set_requires_grad(false);
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_out[i];
  });
}

// ---------------------------------------------------------------------------
// reductions and losses

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [](BackwardContext& ctx) {
    const double g0 = ctx.grad_out[0];
    for (double& g : *ctx.grad_in[0]) g += g0;
  });
}

Var sum_last_axis(const Var& x) {
  const Shape& xs = x.shape();
  const std::size_t n = xs.back();
  const std::size_t rows = shape_numel(xs) / n;
  Shape out_shape = xs;
  out_shape.back() = 1;
  Tensor out(out_shape);
  const auto xd = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xd[r * n + j];
    out[r] = s;
  }
  return x.tape().record(std::move(out), {x}, [rows, n](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += ctx.grad_out[r];
    }
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mse(const Var& pred, const Var& target) {
  if (pred.shape() != target.shape()) shape_error("mse", pred.shape(), target.shape());
  const Tensor* pp = &pred.value();
  const Tensor* tp = &target.value();
  const std::size_t n = pp->size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (*pp)[i] - (*tp)[i];
    s += d * d;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return pred.tape().record(Tensor::scalar(s * inv_n), {pred, target}, [pp, tp, inv_n](BackwardContext& ctx) {
    const double g0 = 2.0 * inv_n * ctx.grad_out[0];
    const std::size_t n = pp->size();
    if (auto* gp = ctx.grad_in[0]) {
      for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g0 * ((*pp)[i] - (*tp)[i]);
    }
    if (auto* gt = ctx.grad_in[1]) {
      for (std::size_t i = 0; i < n; ++i) (*gt)[i] -= g0 * ((*pp)[i] - (*tp)[i]);
    }
  });
}

Var sum_squares(const Var& x) {
  const Tensor* xp = &x.value();
  double s = 0.0;
  for (double v : xp->data()) s += v * v;
  return x.tape().record(Tensor::scalar(s), {x}, [xp](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    const double g0 = 2.0 * ctx.grad_out[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * (*xp)[i];
  });
}

// ---------------------------------------------------------------------------
// spatial

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t kernel,
           std::size_t stride, std::size_t pad) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw DimensionError("conv2d: expected NHWC input, got " + shape_str(xs));
  const std::size_t B = xs[0], H = xs[1], W = xs[2], Cin = xs[3];
  const std::size_t K = kernel * kernel * Cin;
  if (weight.rank() != 2 || weight.dim(0) != K) shape_error("conv2d", xs, weight.shape());
  const std::size_t Cout = weight.dim(1);
  if (bias.shape() != Shape{Cout}) shape_error("conv2d", weight.shape(), bias.shape());
  if (stride == 0 || H + 2 * pad < kernel || W + 2 * pad < kernel) {
    throw ArgumentError("conv2d: invalid kernel/stride/pad for input " + shape_str(xs));
  }
  const std::size_t Ho = (H + 2 * pad - kernel) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kernel) / stride + 1;
  const std::size_t rows = B * Ho * Wo;

  // im2col
  auto cols = std::make_shared<Buffer>(rows * K, 0.0);
  const double* xd = x.value().data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double* row = cols->data() + ((b * Ho + oy) * Wo + ox) * K;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            std::copy_n(xd + ((b * H + iy) * W + ix) * Cin, Cin, row + (ky * kernel + kx) * Cin);
          }
        }
      }
    }
  }

  Tensor out({B, Ho, Wo, Cout});
  const double* wd = weight.value().data().data();
  const double* bd = bias.value().data().data();
  auto O = mmap(out.data().data(), rows, Cout);
  O.noalias() = cmap(cols->data(), rows, K) * cmap(wd, K, Cout);
  O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bd, static_cast<Index>(Cout));

  return x.tape().record(std::move(out), {x, weight, bias},
                         [cols, wd, B, H, W, Cin, Ho, Wo, Cout, K, rows, kernel, stride, pad](BackwardContext& ctx) {
    const auto G = cmap(ctx.grad_out.data(), rows, Cout);
    if (auto* gw = ctx.grad_in[1]) {
      mmap(gw->data(), K, Cout).noalias() += cmap(cols->data(), rows, K).transpose() * G;
    }
    if (auto* gb = ctx.grad_in[2]) {
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), static_cast<Index>(Cout)) += G.colwise().sum();
    }
    if (auto* gx = ctx.grad_in[0]) {
      RowMat dcols = G * cmap(wd, K, Cout).transpose();
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const double* row = dcols.data() + ((b * Ho + oy) * Wo + ox) * K;
            for (std::size_t ky = 0; ky < kernel; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < kernel; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                double* dst = gx->data() + ((b * H + iy) * W + ix) * Cin;
                const double* src = row + (ky * kernel + kx) * Cin;
                for (std::size_t c = 0; c < Cin; ++c) dst[c] += src[c];
              }
            }
          }
        }
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] % 2 || xs[2] % 2) {
    throw DimensionError("avg_pool2: expected NHWC with even H, W, got " + shape_str(xs));
  }
  const std::size_t B = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor out({B, Ho, Wo, C});
  const auto xd = x.value().data();
  auto o = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx)
        for (std::size_t c = 0; c < C; ++c) {
          double s = 0.0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) s += xd[((b * H + 2 * y + dy) * W + 2 * xx + dx) * C + c];
          o[((b * Ho + y) * Wo + xx) * C + c] = 0.25 * s;
        }
  return x.tape().record(std::move(out), {x}, [B, H, W, C, Ho, Wo](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx)
          for (std::size_t c = 0; c < C; ++c) {
            const double v = 0.25 * ctx.grad_out[((b * Ho + y) * Wo + xx) * C + c];
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) g[((b * H + 2 * y + dy) * W + 2 * xx + dx) * C + c] += v;
          }
  });
}

Var upsample2(const Var& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw DimensionError("upsample2: expected NHWC, got " + shape_str(xs));
  const std::size_t B = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  Tensor out({B, Ho, Wo, C});
  const auto xd = x.value().data();
  auto o = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx)
        std::copy_n(xd.data() + ((b * H + y / 2) * W + xx / 2) * C, C, o.data() + ((b * Ho + y) * Wo + xx) * C);
  return x.tape().record(std::move(out), {x}, [B, H, W, C, Ho, Wo](BackwardContext& ctx) {
    auto& g = *ctx.grad_in[0];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          const double* src = ctx.grad_out.data() + ((b * Ho + y) * Wo + xx) * C;
          double* dst = g.data() + ((b * H + y / 2) * W + xx / 2) * C;
          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
        }
  });
}

}  // namespace lgr::ops
