#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace tap {

using Shape = std::vector<int64_t>;

// 64-byte aligned storage. Eigen picks its vectorized code paths by address
// alignment, so a fixed base alignment keeps results bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using Storage = std::vector<T, AlignedAllocator<T>>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Dense row-major tensor. Images and feature maps use NCHW.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const { return shape_; }
  int64_t dim(int i) const;
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  Storage<T>& storage() { return data_; }
  const Storage<T>& storage() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 4-D accessors (NCHW).
  T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  // Reinterprets the shape; element count must match.
  Tensor reshaped(Shape shape) const;
  void fill(T v);

  // Elementwise in-place helpers used by optimizers and gradient accumulation.
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(T s);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  Storage<T> data_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// Batch (dim 0) helpers on 4-D tensors.
template <typename T>
Tensor<T> batch_slice(const Tensor<T>& x, int64_t n);

template <typename T>
Tensor<T> batch_stack(std::span<const Tensor<T>> items);

// Reflect padding on the spatial dims (mirror without repeating the edge).
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, int64_t pad_bottom, int64_t pad_right);

template <typename T>
Tensor<T> crop(const Tensor<T>& x, int64_t top, int64_t left, int64_t height, int64_t width);

// Mirrors an index into [0, n) without repeating the boundary sample.
int64_t reflect_index(int64_t i, int64_t n);

}  // namespace tap
