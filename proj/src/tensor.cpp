#include "lgr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "lgr/errors.hpp"

namespace lgr {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {
void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor Tensor::from_buffer(Shape shape, Buffer data) {
  Tensor t;
  t.shape_ = std::move(shape);
  check_extents(t.shape_);
  if (data.size() != shape_numel(t.shape_)) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(t.shape_));
  }
  t.data_ = std::move(data);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ArgumentError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  os << shape_str(t.shape()) << " {";
  const std::size_t shown = std::min<std::size_t>(t.size(), 32);
  for (std::size_t i = 0; i < shown; ++i) os << (i ? ", " : "") << t[i];
  if (shown < t.size()) os << ", ...";
  return os << "}";
}

}  // namespace lgr
