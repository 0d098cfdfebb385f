#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace lgr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Hands out 64-byte aligned blocks. Vectorized kernels peel a different
/// number of leading elements depending on alignment, which changes rounding;
/// fixed alignment keeps results bit-identical from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

/// Aligned storage for tensor values and gradient accumulators.
using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of doubles. A plain value: copying copies the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  /// Adopts `data` without copying; its length must match the shape.
  static Tensor from_buffer(Shape shape, Buffer data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor eye(std::size_t n);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  bool empty() const noexcept { return data_.empty(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor& set_requires_grad(bool on = true) noexcept {
    requires_grad_ = on;
    return *this;
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Buffer data_;
  bool requires_grad_ = false;
};

/// Largest absolute elementwise difference; throws DimensionError on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Shape followed by the values, e.g. "[2x2] {1, 2, 3, 4}"; long tensors are elided.
std::ostream& operator<<(std::ostream& os, const Tensor& t);

}  // namespace lgr
