#include "tap/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "tap/errors.hpp"

namespace tap {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ConfigError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ConfigError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                      shape_str(shape_));
}

template <typename T>
int64_t Tensor<T>::dim(int i) const {
  if (i < 0) i += ndim();
  return shape_.at(static_cast<size_t>(i));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
  if (other.shape_ != shape_)
    throw ConfigError("shape mismatch in +=: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  T* a = data_.data();
  const T* b = other.data_.data();
  const size_t n = data_.size();
  for (size_t i = 0; i < n; ++i) a[i] += b[i];
  return *this;
}

template <typename T>
Tensor<T>& Tensor<T>::operator*=(T s) {
  for (auto& v : data_) v *= s;
  return *this;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (auto v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  if (a.numel() == 0) return true;
  return std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<size_t>(a.numel())) == 0;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ConfigError("shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

template <typename T>
Tensor<T> batch_slice(const Tensor<T>& x, int64_t n) {
  if (x.ndim() != 4 || n < 0 || n >= x.dim(0))
    throw ConfigError("batch_slice: index " + std::to_string(n) + " out of range for " + shape_str(x.shape()));
  const int64_t per = x.numel() / x.dim(0);
  Tensor<T> out({1, x.dim(1), x.dim(2), x.dim(3)});
  std::memcpy(out.data(), x.data() + n * per, sizeof(T) * static_cast<size_t>(per));
  return out;
}

template <typename T>
Tensor<T> batch_stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ConfigError("batch_stack: no tensors");
  const Shape& s0 = items[0].shape();
  if (s0.size() != 4) throw ConfigError("batch_stack expects 4-D tensors");
  int64_t n = 0;
  for (const auto& t : items) {
    if (t.ndim() != 4 || t.dim(1) != s0[1] || t.dim(2) != s0[2] || t.dim(3) != s0[3])
      throw ConfigError("batch_stack: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(s0));
    n += t.dim(0);
  }
  Tensor<T> out({n, s0[1], s0[2], s0[3]});
  T* dst = out.data();
  for (const auto& t : items) {
    std::memcpy(dst, t.data(), sizeof(T) * static_cast<size_t>(t.numel()));
    dst += t.numel();
  }
  return out;
}

int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, int64_t pad_bottom, int64_t pad_right) {
  if (x.ndim() != 4) throw ConfigError("reflect_pad expects NCHW");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H + pad_bottom, Wo = W + pad_right;
  Tensor<T> out({N, C, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < Ho; ++h) {
        const int64_t sh = reflect_index(h, H);
        for (int64_t w = 0; w < Wo; ++w) out.at(n, c, h, w) = x.at(n, c, sh, reflect_index(w, W));
      }
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, int64_t top, int64_t left, int64_t height, int64_t width) {
  if (x.ndim() != 4 || top < 0 || left < 0 || top + height > x.dim(2) || left + width > x.dim(3))
    throw ConfigError("crop window out of range for " + shape_str(x.shape()));
  const int64_t N = x.dim(0), C = x.dim(1);
  Tensor<T> out({N, C, height, width});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t h = 0; h < height; ++h)
        std::memcpy(&out.at(n, c, h, 0), &x.at(n, c, top + h, left), sizeof(T) * static_cast<size_t>(width));
  return out;
}

#define TAP_INSTANTIATE(T)                                                            \
  template class Tensor<T>;                                                           \
  template bool bitwise_equal(const Tensor<T>&, const Tensor<T>&);                    \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> batch_slice(const Tensor<T>&, int64_t);                          \
  template Tensor<T> batch_stack(std::span<const Tensor<T>>);                         \
  template Tensor<T> reflect_pad(const Tensor<T>&, int64_t, int64_t);                 \
  template Tensor<T> crop(const Tensor<T>&, int64_t, int64_t, int64_t, int64_t);

TAP_INSTANTIATE(float)
TAP_INSTANTIATE(double)
#undef TAP_INSTANTIATE

}  // namespace tap
