#pragma once

#include <cstdint>

#include "tap/tensor.hpp"

// Raw forward/backward kernels on NCHW tensors. The autograd layer in ops.hpp
// wraps these; tests call them directly against brute-force oracles.
namespace tap::kernels {

struct ConvGeom {
  int64_t stride = 1;
  int64_t pad = 0;
  int64_t groups = 1;
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

// weight: [Cout, Cin/groups, K, K]; bias: [Cout] or empty.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeom& g);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, bool has_bias, const Tensor<T>& grad_out,
                             const ConvGeom& g, bool need_input, bool need_params);

// Deformable convolution v1: stride 1, dilation 1, no modulation mask.
// Offsets are laid out per deformable group, per kernel tap, as (dy, dx):
// channel 2 * (group * K * K + tap) holds dy and the next channel holds dx.
struct DeformGeom {
  int64_t kernel = 3;
  int64_t pad = 1;
  int64_t deform_groups = 1;
};

template <typename T>
struct DeformGrads {
  Tensor<T> input;
  Tensor<T> offset;
  Tensor<T> weight;
  Tensor<T> bias;
};

// Bilinear sample of one H x W plane with zero padding outside the image.
template <typename T>
T bilinear_zero_pad(const T* plane, int64_t H, int64_t W, T y, T x);

template <typename T>
Tensor<T> deform_conv_forward(const Tensor<T>& x, const Tensor<T>& offset, const Tensor<T>& weight,
                              const Tensor<T>& bias, const DeformGeom& g);

template <typename T>
DeformGrads<T> deform_conv_backward(const Tensor<T>& x, const Tensor<T>& offset, const Tensor<T>& weight,
                                    bool has_bias, const Tensor<T>& grad_out, const DeformGeom& g);

// 2x bilinear upsampling with half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& x);

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad_out, const Shape& input_shape);

}  // namespace tap::kernels
