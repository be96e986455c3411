#include "tap/ops.hpp"

#include <cmath>
#include <cstring>

#include "tap/errors.hpp"

namespace tap::ops {
namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_4d(const Tensor<T>& a, const char* op) {
  if (a.ndim() != 4) throw ConfigError(std::string(op) + ": expected NCHW, got " + shape_str(a.shape()));
}

template <typename T>
bool wants(const Node<T>& n, size_t i) {
  return n.parents[i]->requires_grad;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (wants(n, 0)) n.parents[0]->accumulate(n.grad);
    if (wants(n, 1)) n.parents[1]->accumulate(n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (wants(n, 0)) n.parents[0]->accumulate(n.grad);
    if (wants(n, 1)) {
      Tensor<T> g = n.grad;
      g *= T(-1);
      n.parents[1]->accumulate(std::move(g));
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.value(), b.value(), "mul");
  Tensor<T> out(a.shape());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = pa[i] * pb[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (wants(n, 0)) {
      Tensor<T> g(av.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * bv[i];
      n.parents[0]->accumulate(std::move(g));
    }
    if (wants(n, 1)) {
      Tensor<T> g(bv.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * av[i];
      n.parents[1]->accumulate(std::move(g));
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  out *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    Tensor<T> g = n.grad;
    g *= s;
    n.parents[0]->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const kernels::ConvGeom& geom) {
  const bool has_bias = bias.defined();
  Tensor<T> out = kernels::conv2d_forward(x.value(), weight.value(), has_bias ? bias.value() : Tensor<T>(), geom);
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [geom, has_bias](Node<T>& n) {
    const bool need_x = wants(n, 0);
    const bool need_p = wants(n, 1) || (has_bias && wants(n, 2));
    auto g = kernels::conv2d_backward(n.parents[0]->value, n.parents[1]->value, has_bias, n.grad, geom, need_x,
                                      need_p);
    if (need_x) n.parents[0]->accumulate(std::move(g.input));
    if (wants(n, 1)) n.parents[1]->accumulate(std::move(g.weight));
    if (has_bias && wants(n, 2)) n.parents[2]->accumulate(std::move(g.bias));
  });
}

template <typename T>
Var<T> deform_conv2d(const Var<T>& x, const Var<T>& offset, const Var<T>& weight, const Var<T>& bias,
                     const kernels::DeformGeom& geom) {
  const bool has_bias = bias.defined();
  Tensor<T> out = kernels::deform_conv_forward(x.value(), offset.value(), weight.value(),
                                               has_bias ? bias.value() : Tensor<T>(), geom);
  std::vector<Var<T>> inputs{x, offset, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [geom, has_bias](Node<T>& n) {
    auto g = kernels::deform_conv_backward(n.parents[0]->value, n.parents[1]->value, n.parents[2]->value, has_bias,
                                           n.grad, geom);
    if (wants(n, 0)) n.parents[0]->accumulate(std::move(g.input));
    if (wants(n, 1)) n.parents[1]->accumulate(std::move(g.offset));
    if (wants(n, 2)) n.parents[2]->accumulate(std::move(g.weight));
    if (has_bias && wants(n, 3)) n.parents[3]->accumulate(std::move(g.bias));
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x.value();
  for (auto& v : out.span()) v = v > T(0) ? v : v * slope;
  return make_result<T>(std::move(out), {x}, [slope](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    Tensor<T> g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (!(xv[i] > T(0))) g[i] *= slope;
    n.parents[0]->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> out = x.value();
  for (auto& v : out.span()) v = std::min(std::max(v, lo), hi);
  return make_result<T>(std::move(out), {x}, [lo, hi](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    Tensor<T> g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (xv[i] < lo || xv[i] > hi) g[i] = T(0);
    n.parents[0]->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> xs) {
  if (xs.empty()) throw ConfigError("concat_channels: no inputs");
  const auto& s0 = xs[0].shape();
  if (s0.size() != 4) throw ConfigError("concat_channels expects NCHW");
  int64_t C = 0;
  for (const auto& x : xs) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw ConfigError("concat_channels: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    C += s[1];
  }
  const int64_t N = s0[0], HW = s0[2] * s0[3];
  Tensor<T> out({N, C, s0[2], s0[3]});
  std::vector<int64_t> widths;
  for (int64_t n = 0; n < N; ++n) {
    T* dst = out.data() + n * C * HW;
    for (const auto& x : xs) {
      const int64_t cx = x.dim(1);
      std::memcpy(dst, x.value().data() + n * cx * HW, sizeof(T) * static_cast<size_t>(cx * HW));
      dst += cx * HW;
    }
  }
  for (const auto& x : xs) widths.push_back(x.dim(1));
  std::vector<Var<T>> inputs(xs.begin(), xs.end());
  return make_result<T>(std::move(out), std::move(inputs), [widths, N, C, HW](Node<T>& n) {
    int64_t off = 0;
    for (size_t i = 0; i < widths.size(); ++i) {
      const int64_t cx = widths[i];
      if (wants(n, i)) {
        Tensor<T> g(n.parents[i]->value.shape());
        for (int64_t b = 0; b < N; ++b)
          std::memcpy(g.data() + b * cx * HW, n.grad.data() + (b * C + off) * HW,
                      sizeof(T) * static_cast<size_t>(cx * HW));
        n.parents[i]->accumulate(std::move(g));
      }
      off += cx;
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t start, int64_t count) {
  require_4d(x.value(), "slice_channels");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), HW = H * W;
  if (start < 0 || count < 0 || start + count > C) throw ConfigError("slice_channels: range out of bounds");
  Tensor<T> out({N, count, H, W});
  for (int64_t n = 0; n < N; ++n)
    std::memcpy(out.data() + n * count * HW, x.value().data() + (n * C + start) * HW,
                sizeof(T) * static_cast<size_t>(count * HW));
  return make_result<T>(std::move(out), {x}, [N, C, HW, start, count](Node<T>& n) {
    Tensor<T> g(n.parents[0]->value.shape());
    for (int64_t b = 0; b < N; ++b)
      std::memcpy(g.data() + (b * C + start) * HW, n.grad.data() + b * count * HW,
                  sizeof(T) * static_cast<size_t>(count * HW));
    n.parents[0]->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> gather_batch(const Var<T>& x, std::span<const int64_t> indices) {
  require_4d(x.value(), "gather_batch");
  const int64_t N = x.dim(0), per = x.value().numel() / std::max<int64_t>(N, 1);
  std::vector<int64_t> idx(indices.begin(), indices.end());
  for (auto i : idx)
    if (i < 0 || i >= N) throw ConfigError("gather_batch: index out of range");
  Tensor<T> out({static_cast<int64_t>(idx.size()), x.dim(1), x.dim(2), x.dim(3)});
  for (size_t k = 0; k < idx.size(); ++k)
    std::memcpy(out.data() + static_cast<int64_t>(k) * per, x.value().data() + idx[k] * per,
                sizeof(T) * static_cast<size_t>(per));
  return make_result<T>(std::move(out), {x}, [idx, per](Node<T>& n) {
    Tensor<T> g(n.parents[0]->value.shape());
    for (size_t k = 0; k < idx.size(); ++k) {
      T* dst = g.data() + idx[k] * per;
      const T* src = n.grad.data() + static_cast<int64_t>(k) * per;
      for (int64_t i = 0; i < per; ++i) dst[i] += src[i];
    }
    n.parents[0]->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int64_t r) {
  require_4d(x.value(), "pixel_shuffle");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C % (r * r) != 0) throw ConfigError("pixel_shuffle: channels not divisible by r^2");
  const int64_t Co = C / (r * r);
  Tensor<T> out({N, Co, H * r, W * r});
  // out[n, c, h*r + i, w*r + j] = in[n, c*r*r + i*r + j, h, w]
  auto index_in = [=](int64_t n, int64_t c, int64_t i, int64_t j, int64_t h, int64_t w) {
    return ((n * C + c * r * r + i * r + j) * H + h) * W + w;
  };
  auto index_out = [=](int64_t n, int64_t c, int64_t i, int64_t j, int64_t h, int64_t w) {
    return ((n * Co + c) * H * r + h * r + i) * W * r + w * r + j;
  };
  const T* src = x.value().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < Co; ++c)
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < r; ++j)
          for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) out[index_out(n, c, i, j, h, w)] = src[index_in(n, c, i, j, h, w)];
  return make_result<T>(std::move(out), {x}, [=](Node<T>& nd) {
    Tensor<T> g(nd.parents[0]->value.shape());
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < Co; ++c)
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < r; ++j)
            for (int64_t h = 0; h < H; ++h)
              for (int64_t w = 0; w < W; ++w) g[index_in(n, c, i, j, h, w)] = nd.grad[index_out(n, c, i, j, h, w)];
    nd.parents[0]->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  Tensor<T> out = kernels::upsample2x_forward(x.value());
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    n.parents[0]->accumulate(kernels::upsample2x_backward(n.grad, n.parents[0]->value.shape()));
  });
}

template <typename T>
Var<T> mul_channels(const Var<T>& x, const Var<T>& s) {
  require_4d(x.value(), "mul_channels");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const auto& ss = s.shape();
  if (ss.size() != 4 || ss[1] != C || ss[2] != 1 || ss[3] != 1 || (ss[0] != 1 && ss[0] != N))
    throw ConfigError("mul_channels: scale shape " + shape_str(ss) + " incompatible with " + shape_str(x.shape()));
  const bool per_batch = ss[0] == N && N != 1;
  Tensor<T> out(x.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T sv = s.value()[(per_batch ? n * C : 0) + c];
      const T* src = x.value().data() + (n * C + c) * HW;
      T* dst = out.data() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] * sv;
    }
  return make_result<T>(std::move(out), {x, s}, [N, C, HW, per_batch](Node<T>& nd) {
    const auto& xv = nd.parents[0]->value;
    const auto& sv = nd.parents[1]->value;
    if (wants(nd, 0)) {
      Tensor<T> g(xv.shape());
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T k = sv[(per_batch ? n * C : 0) + c];
          const T* go = nd.grad.data() + (n * C + c) * HW;
          T* dst = g.data() + (n * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) dst[i] = go[i] * k;
        }
      nd.parents[0]->accumulate(std::move(g));
    }
    if (wants(nd, 1)) {
      Tensor<T> g(sv.shape());
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const T* go = nd.grad.data() + (n * C + c) * HW;
          const T* xs = xv.data() + (n * C + c) * HW;
          T acc = 0;
          for (int64_t i = 0; i < HW; ++i) acc += go[i] * xs[i];
          g[(per_batch ? n * C : 0) + c] += acc;
        }
      nd.parents[1]->accumulate(std::move(g));
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_4d(x.value(), "global_avg_pool");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out({N, C, 1, 1});
  for (int64_t i = 0; i < N * C; ++i) {
    const T* src = x.value().data() + i * HW;
    T acc = 0;
    for (int64_t k = 0; k < HW; ++k) acc += src[k];
    out[i] = acc / static_cast<T>(HW);
  }
  return make_result<T>(std::move(out), {x}, [N, C, HW](Node<T>& n) {
    Tensor<T> g(n.parents[0]->value.shape());
    for (int64_t i = 0; i < N * C; ++i) {
      const T v = n.grad[i] / static_cast<T>(HW);
      std::fill(g.data() + i * HW, g.data() + (i + 1) * HW, v);
    }
    n.parents[0]->accumulate(std::move(g));
  });
}

template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, T eps) {
  require_4d(x.value(), "layer_norm_channels");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (weight.value().numel() != C || bias.value().numel() != C)
    throw ConfigError("layer_norm_channels: affine parameters must have length C");
  Tensor<T> out(x.shape());
  Tensor<T> normed(x.shape());
  Tensor<T> inv_std({N, HW});
  const T* xv = x.value().data();
  const T* wv = weight.value().data();
  const T* bv = bias.value().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t p = 0; p < HW; ++p) {
      T mu = 0;
      for (int64_t c = 0; c < C; ++c) mu += xv[(n * C + c) * HW + p];
      mu /= static_cast<T>(C);
      T var = 0;
      for (int64_t c = 0; c < C; ++c) {
        const T d = xv[(n * C + c) * HW + p] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[n * HW + p] = is;
      for (int64_t c = 0; c < C; ++c) {
        const int64_t i = (n * C + c) * HW + p;
        const T y = (xv[i] - mu) * is;
        normed[i] = y;
        out[i] = wv[c] * y + bv[c];
      }
    }
  return make_result<T>(std::move(out), {x, weight, bias},
                        [N, C, HW, normed = std::move(normed), inv_std = std::move(inv_std)](Node<T>& nd) {
                          const T* w = nd.parents[1]->value.data();
                          const T* go = nd.grad.data();
                          if (wants(nd, 0)) {
                            Tensor<T> g(nd.parents[0]->value.shape());
                            for (int64_t n = 0; n < N; ++n)
                              for (int64_t p = 0; p < HW; ++p) {
                                T mean_dy = 0, mean_dyy = 0;
                                for (int64_t c = 0; c < C; ++c) {
                                  const int64_t i = (n * C + c) * HW + p;
                                  const T dy = go[i] * w[c];
                                  mean_dy += dy;
                                  mean_dyy += dy * normed[i];
                                }
                                mean_dy /= static_cast<T>(C);
                                mean_dyy /= static_cast<T>(C);
                                const T is = inv_std[n * HW + p];
                                for (int64_t c = 0; c < C; ++c) {
                                  const int64_t i = (n * C + c) * HW + p;
                                  g[i] = is * (go[i] * w[c] - mean_dy - normed[i] * mean_dyy);
                                }
                              }
                            nd.parents[0]->accumulate(std::move(g));
                          }
                          if (wants(nd, 1) || wants(nd, 2)) {
                            Tensor<T> gw(nd.parents[1]->value.shape());
                            Tensor<T> gb(nd.parents[2]->value.shape());
                            for (int64_t n = 0; n < N; ++n)
                              for (int64_t c = 0; c < C; ++c)
                                for (int64_t p = 0; p < HW; ++p) {
                                  const int64_t i = (n * C + c) * HW + p;
                                  gw[c] += go[i] * normed[i];
                                  gb[c] += go[i];
                                }
                            if (wants(nd, 1)) nd.parents[1]->accumulate(std::move(gw));
                            if (wants(nd, 2)) nd.parents[2]->accumulate(std::move(gb));
                          }
                        });
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target) {
  require_same(pred.value(), target, "l1_loss");
  const int64_t n = target.numel();
  T acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(pred.value()[i] - target[i]);
  Tensor<T> out({1}, acc / static_cast<T>(n));
  return make_result<T>(std::move(out), {pred}, [target, n](Node<T>& nd) {
    const auto& pv = nd.parents[0]->value;
    const T k = nd.grad[0] / static_cast<T>(n);
    Tensor<T> g(pv.shape());
    for (int64_t i = 0; i < n; ++i) {
      const T d = pv[i] - target[i];
      g[i] = d > T(0) ? k : (d < T(0) ? -k : T(0));
    }
    nd.parents[0]->accumulate(std::move(g));
  });
}

#define TAP_INSTANTIATE(T)                                                                                    \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                          \
  template Var<T> scale(const Var<T>&, T);                                                                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, const kernels::ConvGeom&);              \
  template Var<T> deform_conv2d(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,                   \
                                const kernels::DeformGeom&);                                                  \
  template Var<T> leaky_relu(const Var<T>&, T);                                                               \
  template Var<T> clamp(const Var<T>&, T, T);                                                                 \
  template Var<T> concat_channels(std::span<const Var<T>>);                                                   \
  template Var<T> slice_channels(const Var<T>&, int64_t, int64_t);                                            \
  template Var<T> gather_batch(const Var<T>&, std::span<const int64_t>);                                      \
  template Var<T> pixel_shuffle(const Var<T>&, int64_t);                                                      \
  template Var<T> upsample2x(const Var<T>&);                                                                  \
  template Var<T> mul_channels(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> global_avg_pool(const Var<T>&);                                                             \
  template Var<T> layer_norm_channels(const Var<T>&, const Var<T>&, const Var<T>&, T);                        \
  template Var<T> l1_loss(const Var<T>&, const Tensor<T>&);

TAP_INSTANTIATE(float)
TAP_INSTANTIATE(double)
#undef TAP_INSTANTIATE

}  // namespace tap::ops
