#pragma once

#include <span>
#include <vector>

#include "tap/autograd.hpp"
#include "tap/kernels.hpp"

// Differentiable ops over NCHW Vars.
namespace tap::ops {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);

// `bias` may be an undefined Var.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const kernels::ConvGeom& g);

template <typename T>
Var<T> deform_conv2d(const Var<T>& x, const Var<T>& offset, const Var<T>& weight, const Var<T>& bias,
                     const kernels::DeformGeom& g);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs);

template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t start, int64_t count);

// Selects batch entries (dim 0) in the given order.
template <typename T>
Var<T> gather_batch(const Var<T>& x, std::span<const int64_t> indices);

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int64_t r);

template <typename T>
Var<T> upsample2x(const Var<T>& x);

// x * s with s of shape [1 or N, C, 1, 1] broadcast over space.
template <typename T>
Var<T> mul_channels(const Var<T>& x, const Var<T>& s);

template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

// Normalizes across channels at every pixel; weight and bias are [C].
template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, T eps);

// Mean absolute error against a constant target.
template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target);

}  // namespace tap::ops
