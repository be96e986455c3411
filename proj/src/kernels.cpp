#include "tap/kernels.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>

#include "tap/errors.hpp"

namespace tap::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

int64_t out_size(int64_t in, int64_t k, int64_t stride, int64_t pad) { return (in + 2 * pad - k) / stride + 1; }

template <typename T>
void im2col(const T* img, int64_t C, int64_t H, int64_t W, int64_t K, int64_t stride, int64_t pad, int64_t Ho,
            int64_t Wo, T* col) {
  const int64_t HWo = Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ki = 0; ki < K; ++ki)
      for (int64_t kj = 0; kj < K; ++kj) {
        T* row = col + ((c * K + ki) * K + kj) * HWo;
        const T* plane = img + c * H * W;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          T* dst = row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = plane + ih * W;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t K, int64_t stride, int64_t pad, int64_t Ho,
            int64_t Wo, T* img) {
  const int64_t HWo = Ho * Wo;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ki = 0; ki < K; ++ki)
      for (int64_t kj = 0; kj < K; ++kj) {
        const T* row = col + ((c * K + ki) * K + kj) * HWo;
        T* plane = img + c * H * W;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          const int64_t ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          T* dst = plane + ih * W;
          const T* src = row + oh * Wo;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            const int64_t iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
}

void check_conv_shapes(const Shape& xs, const Shape& ws, int64_t bias_n, const ConvGeom& g) {
  if (xs.size() != 4 || ws.size() != 4) throw ConfigError("conv2d expects 4-D input and weight");
  if (ws[2] != ws[3]) throw ConfigError("conv2d supports square kernels only");
  if (g.groups < 1 || xs[1] % g.groups != 0 || ws[0] % g.groups != 0)
    throw ConfigError("conv2d: groups do not divide channels");
  if (ws[1] * g.groups != xs[1])
    throw ConfigError("conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                      std::to_string(ws[1] * g.groups));
  if (bias_n != 0 && bias_n != ws[0]) throw ConfigError("conv2d: bias length mismatch");
  if (out_size(xs[2], ws[2], g.stride, g.pad) < 1 || out_size(xs[3], ws[3], g.stride, g.pad) < 1)
    throw ConfigError("conv2d: input " + shape_str(xs) + " too small for kernel");
}

bool is_depthwise(const Shape& xs, const Shape& ws, const ConvGeom& g) {
  return g.groups > 1 && g.groups == xs[1] && ws[0] == xs[1] && ws[1] == 1;
}

template <typename T>
Tensor<T> depthwise_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeom& g) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = w.dim(2);
  const int64_t Ho = out_size(H, K, g.stride, g.pad), Wo = out_size(W, K, g.stride, g.pad);
  Tensor<T> out({N, C, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = x.data() + (n * C + c) * H * W;
      const T* wk = w.data() + c * K * K;
      T* dst = out.data() + (n * C + c) * Ho * Wo;
      const T bias = b.empty() ? T(0) : b[c];
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          T acc = 0;
          for (int64_t ki = 0; ki < K; ++ki) {
            const int64_t ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= H) continue;
            for (int64_t kj = 0; kj < K; ++kj) {
              const int64_t iw = ow * g.stride - g.pad + kj;
              if (iw < 0 || iw >= W) continue;
              acc += wk[ki * K + kj] * plane[ih * W + iw];
            }
          }
          dst[oh * Wo + ow] = acc + bias;
        }
    }
  return out;
}

template <typename T>
ConvGrads<T> depthwise_backward(const Tensor<T>& x, const Tensor<T>& w, bool has_bias, const Tensor<T>& gout,
                                const ConvGeom& g, bool need_input, bool need_params) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = w.dim(2);
  const int64_t Ho = gout.dim(2), Wo = gout.dim(3);
  ConvGrads<T> r;
  if (need_input) r.input = Tensor<T>(x.shape());
  if (need_params) {
    r.weight = Tensor<T>(w.shape());
    if (has_bias) r.bias = Tensor<T>({w.dim(0)});
  }
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = x.data() + (n * C + c) * H * W;
      const T* wk = w.data() + c * K * K;
      const T* go = gout.data() + (n * C + c) * Ho * Wo;
      T* dx = need_input ? r.input.data() + (n * C + c) * H * W : nullptr;
      T* dw = need_params ? r.weight.data() + c * K * K : nullptr;
      T db = 0;
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          const T gv = go[oh * Wo + ow];
          db += gv;
          for (int64_t ki = 0; ki < K; ++ki) {
            const int64_t ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= H) continue;
            for (int64_t kj = 0; kj < K; ++kj) {
              const int64_t iw = ow * g.stride - g.pad + kj;
              if (iw < 0 || iw >= W) continue;
              if (dx) dx[ih * W + iw] += wk[ki * K + kj] * gv;
              if (dw) dw[ki * K + kj] += plane[ih * W + iw] * gv;
            }
          }
        }
      if (need_params && has_bias) r.bias[c] += db;
    }
  return r;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeom& g) {
  check_conv_shapes(x.shape(), weight.shape(), bias.numel(), g);
  if (is_depthwise(x.shape(), weight.shape(), g)) return depthwise_forward(x, weight, bias, g);
  const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = weight.dim(0), K = weight.dim(2);
  const int64_t Ho = out_size(H, K, g.stride, g.pad), Wo = out_size(W, K, g.stride, g.pad);
  const int64_t cin_g = Cin / g.groups, cout_g = Cout / g.groups, rows = cin_g * K * K, HWo = Ho * Wo;
  const bool direct = (K == 1 && g.stride == 1 && g.pad == 0);
  Tensor<T> out({N, Cout, Ho, Wo});
  Storage<T> col(direct ? 0 : static_cast<size_t>(rows * HWo));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t gi = 0; gi < g.groups; ++gi) {
      const T* img = x.data() + (n * Cin + gi * cin_g) * H * W;
      const T* colp = img;
      if (!direct) {
        im2col(img, cin_g, H, W, K, g.stride, g.pad, Ho, Wo, col.data());
        colp = col.data();
      }
      CMapMat<T> wmat(weight.data() + gi * cout_g * rows, cout_g, rows);
      CMapMat<T> cmat(colp, rows, HWo);
      MapMat<T> omat(out.data() + (n * Cout + gi * cout_g) * HWo, cout_g, HWo);
      omat.noalias() = wmat * cmat;
      if (!bias.empty())
        for (int64_t o = 0; o < cout_g; ++o) omat.row(o).array() += bias[gi * cout_g + o];
    }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, bool has_bias, const Tensor<T>& grad_out,
                             const ConvGeom& g, bool need_input, bool need_params) {
  check_conv_shapes(x.shape(), weight.shape(), has_bias ? weight.dim(0) : 0, g);
  if (is_depthwise(x.shape(), weight.shape(), g))
    return depthwise_backward(x, weight, has_bias, grad_out, g, need_input, need_params);
  const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = weight.dim(0), K = weight.dim(2);
  const int64_t Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  const int64_t cin_g = Cin / g.groups, cout_g = Cout / g.groups, rows = cin_g * K * K, HWo = Ho * Wo;
  const bool direct = (K == 1 && g.stride == 1 && g.pad == 0);
  ConvGrads<T> r;
  if (need_input) r.input = Tensor<T>(x.shape());
  if (need_params) {
    r.weight = Tensor<T>(weight.shape());
    if (has_bias) r.bias = Tensor<T>({Cout});
  }
  Storage<T> col(static_cast<size_t>(rows * HWo));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t gi = 0; gi < g.groups; ++gi) {
      CMapMat<T> gmat(grad_out.data() + (n * Cout + gi * cout_g) * HWo, cout_g, HWo);
      CMapMat<T> wmat(weight.data() + gi * cout_g * rows, cout_g, rows);
      const T* img = x.data() + (n * Cin + gi * cin_g) * H * W;
      if (need_params) {
        const T* colp = img;
        if (!direct) {
          im2col(img, cin_g, H, W, K, g.stride, g.pad, Ho, Wo, col.data());
          colp = col.data();
        }
        CMapMat<T> cmat(colp, rows, HWo);
        MapMat<T> dw(r.weight.data() + gi * cout_g * rows, cout_g, rows);
        dw.noalias() += gmat * cmat.transpose();
        if (has_bias)
          for (int64_t o = 0; o < cout_g; ++o) r.bias[gi * cout_g + o] += gmat.row(o).sum();
      }
      if (need_input) {
        T* dimg = r.input.data() + (n * Cin + gi * cin_g) * H * W;
        if (direct) {
          MapMat<T> dmat(dimg, rows, HWo);
          dmat.noalias() = wmat.transpose() * gmat;
        } else {
          MapMat<T> dcol(col.data(), rows, HWo);
          dcol.noalias() = wmat.transpose() * gmat;
          col2im(col.data(), cin_g, H, W, K, g.stride, g.pad, Ho, Wo, dimg);
        }
      }
    }
  return r;
}

template <typename T>
T bilinear_zero_pad(const T* plane, int64_t H, int64_t W, T y, T x) {
  if (!(y > T(-1)) || !(y < T(H)) || !(x > T(-1)) || !(x < T(W))) return T(0);
  const T yf = std::floor(y), xf = std::floor(x);
  const int64_t y0 = static_cast<int64_t>(yf), x0 = static_cast<int64_t>(xf);
  const int64_t y1 = y0 + 1, x1 = x0 + 1;
  const T ly = y - yf, lx = x - xf, hy = T(1) - ly, hx = T(1) - lx;
  const T v1 = (y0 >= 0 && x0 >= 0) ? plane[y0 * W + x0] : T(0);
  const T v2 = (y0 >= 0 && x1 < W) ? plane[y0 * W + x1] : T(0);
  const T v3 = (y1 < H && x0 >= 0) ? plane[y1 * W + x0] : T(0);
  const T v4 = (y1 < H && x1 < W) ? plane[y1 * W + x1] : T(0);
  return hy * hx * v1 + hy * lx * v2 + ly * hx * v3 + ly * lx * v4;
}

namespace {

void check_deform_shapes(const Shape& xs, const Shape& os, const Shape& ws, int64_t bias_n, const DeformGeom& g) {
  if (xs.size() != 4 || os.size() != 4 || ws.size() != 4) throw ConfigError("deform_conv expects 4-D tensors");
  const int64_t K = g.kernel;
  if (ws[2] != K || ws[3] != K) throw ConfigError("deform_conv: weight kernel does not match geometry");
  if (ws[1] != xs[1])
    throw ConfigError("deform_conv: weight expects " + std::to_string(ws[1]) + " input channels, got " +
                      std::to_string(xs[1]));
  if (g.deform_groups < 1 || xs[1] % g.deform_groups != 0)
    throw ConfigError("deform_conv: deformable groups (" + std::to_string(g.deform_groups) +
                      ") must divide feature channels (" + std::to_string(xs[1]) + ")");
  if (os[1] != 2 * K * K * g.deform_groups)
    throw ConfigError("deform_conv: offset has " + std::to_string(os[1]) + " channels, expected 2*K*K*G = " +
                      std::to_string(2 * K * K * g.deform_groups));
  const int64_t Ho = xs[2] + 2 * g.pad - K + 1, Wo = xs[3] + 2 * g.pad - K + 1;
  if (os[0] != xs[0] || os[2] != Ho || os[3] != Wo)
    throw ConfigError("deform_conv: offset shape " + shape_str(os) + " incompatible with input " + shape_str(xs));
  if (bias_n != 0 && bias_n != ws[0]) throw ConfigError("deform_conv: bias length mismatch");
}

template <typename T>
void deform_im2col(const T* img, const T* off, int64_t C, int64_t H, int64_t W, const DeformGeom& g, int64_t Ho,
                   int64_t Wo, T* col) {
  const int64_t K = g.kernel, KK = K * K, HWo = Ho * Wo, cpg = C / g.deform_groups;
  for (int64_t c = 0; c < C; ++c) {
    const int64_t grp = c / cpg;
    const T* plane = img + c * H * W;
    for (int64_t k = 0; k < KK; ++k) {
      const T* dy = off + (2 * (grp * KK + k)) * HWo;
      const T* dx = dy + HWo;
      const int64_t ki = k / K, kj = k % K;
      T* row = col + (c * KK + k) * HWo;
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          const int64_t p = oh * Wo + ow;
          const T y = T(oh - g.pad + ki) + dy[p];
          const T x = T(ow - g.pad + kj) + dx[p];
          row[p] = bilinear_zero_pad(plane, H, W, y, x);
        }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> deform_conv_forward(const Tensor<T>& x, const Tensor<T>& offset, const Tensor<T>& weight,
                              const Tensor<T>& bias, const DeformGeom& g) {
  check_deform_shapes(x.shape(), offset.shape(), weight.shape(), bias.numel(), g);
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), Cout = weight.dim(0);
  const int64_t Ho = offset.dim(2), Wo = offset.dim(3), HWo = Ho * Wo, rows = C * g.kernel * g.kernel;
  Tensor<T> out({N, Cout, Ho, Wo});
  Storage<T> col(static_cast<size_t>(rows * HWo));
  CMapMat<T> wmat(weight.data(), Cout, rows);
  for (int64_t n = 0; n < N; ++n) {
    deform_im2col(x.data() + n * C * H * W, offset.data() + n * offset.dim(1) * HWo, C, H, W, g, Ho, Wo,
                  col.data());
    CMapMat<T> cmat(col.data(), rows, HWo);
    MapMat<T> omat(out.data() + n * Cout * HWo, Cout, HWo);
    omat.noalias() = wmat * cmat;
    if (!bias.empty())
      for (int64_t o = 0; o < Cout; ++o) omat.row(o).array() += bias[o];
  }
  return out;
}

template <typename T>
DeformGrads<T> deform_conv_backward(const Tensor<T>& x, const Tensor<T>& offset, const Tensor<T>& weight,
                                    bool has_bias, const Tensor<T>& grad_out, const DeformGeom& g) {
  check_deform_shapes(x.shape(), offset.shape(), weight.shape(), has_bias ? weight.dim(0) : 0, g);
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), Cout = weight.dim(0);
  const int64_t K = g.kernel, KK = K * K, Ho = offset.dim(2), Wo = offset.dim(3), HWo = Ho * Wo;
  const int64_t rows = C * KK, cpg = C / g.deform_groups, OC = offset.dim(1);
  DeformGrads<T> r{Tensor<T>(x.shape()), Tensor<T>(offset.shape()), Tensor<T>(weight.shape()),
                   has_bias ? Tensor<T>({Cout}) : Tensor<T>()};
  Storage<T> col(static_cast<size_t>(rows * HWo));
  Storage<T> dcol(static_cast<size_t>(rows * HWo));
  CMapMat<T> wmat(weight.data(), Cout, rows);
  MapMat<T> dw(r.weight.data(), Cout, rows);
  for (int64_t n = 0; n < N; ++n) {
    const T* img = x.data() + n * C * H * W;
    const T* off = offset.data() + n * OC * HWo;
    CMapMat<T> gmat(grad_out.data() + n * Cout * HWo, Cout, HWo);
    deform_im2col(img, off, C, H, W, g, Ho, Wo, col.data());
    CMapMat<T> cmat(col.data(), rows, HWo);
    dw.noalias() += gmat * cmat.transpose();
    if (has_bias)
      for (int64_t o = 0; o < Cout; ++o) r.bias[o] += gmat.row(o).sum();
    MapMat<T> dcmat(dcol.data(), rows, HWo);
    dcmat.noalias() = wmat.transpose() * gmat;

    T* dimg = r.input.data() + n * C * H * W;
    T* doff = r.offset.data() + n * OC * HWo;
    for (int64_t c = 0; c < C; ++c) {
      const int64_t grp = c / cpg;
      const T* plane = img + c * H * W;
      T* dplane = dimg + c * H * W;
      for (int64_t k = 0; k < KK; ++k) {
        const T* dy = off + (2 * (grp * KK + k)) * HWo;
        const T* dx = dy + HWo;
        T* gdy = doff + (2 * (grp * KK + k)) * HWo;
        T* gdx = gdy + HWo;
        const int64_t ki = k / K, kj = k % K;
        const T* grow = dcol.data() + (c * KK + k) * HWo;
        for (int64_t oh = 0; oh < Ho; ++oh)
          for (int64_t ow = 0; ow < Wo; ++ow) {
            const int64_t p = oh * Wo + ow;
            const T gv = grow[p];
            const T y = T(oh - g.pad + ki) + dy[p];
            const T xx = T(ow - g.pad + kj) + dx[p];
            if (!(y > T(-1)) || !(y < T(H)) || !(xx > T(-1)) || !(xx < T(W))) continue;
            const T yf = std::floor(y), xf = std::floor(xx);
            const int64_t y0 = static_cast<int64_t>(yf), x0 = static_cast<int64_t>(xf);
            const int64_t y1 = y0 + 1, x1 = x0 + 1;
            const T ly = y - yf, lx = xx - xf, hy = T(1) - ly, hx = T(1) - lx;
            const bool in1 = y0 >= 0 && x0 >= 0, in2 = y0 >= 0 && x1 < W;
            const bool in3 = y1 < H && x0 >= 0, in4 = y1 < H && x1 < W;
            const T v1 = in1 ? plane[y0 * W + x0] : T(0);
            const T v2 = in2 ? plane[y0 * W + x1] : T(0);
            const T v3 = in3 ? plane[y1 * W + x0] : T(0);
            const T v4 = in4 ? plane[y1 * W + x1] : T(0);
            if (in1) dplane[y0 * W + x0] += hy * hx * gv;
            if (in2) dplane[y0 * W + x1] += hy * lx * gv;
            if (in3) dplane[y1 * W + x0] += ly * hx * gv;
            if (in4) dplane[y1 * W + x1] += ly * lx * gv;
            gdy[p] += gv * (hx * (v3 - v1) + lx * (v4 - v2));
            gdx[p] += gv * (hy * (v2 - v1) + ly * (v4 - v3));
          }
      }
    }
  }
  return r;
}

namespace {

// Source index and weight for 2x upsampling along one axis (half-pixel centers).
struct Tap {
  int64_t i0, i1;
  double l1;
};

Tap upsample_tap(int64_t o, int64_t n) {
  double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
  if (src < 0) src = 0;
  const int64_t i0 = static_cast<int64_t>(src);
  const int64_t i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

}  // namespace

template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ConfigError("upsample2x expects NCHW");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({N, C, 2 * H, 2 * W});
  std::vector<Tap> ty, tx;
  for (int64_t o = 0; o < 2 * H; ++o) ty.push_back(upsample_tap(o, H));
  for (int64_t o = 0; o < 2 * W; ++o) tx.push_back(upsample_tap(o, W));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.data() + nc * H * W;
    T* dst = out.data() + nc * 4 * H * W;
    for (int64_t oh = 0; oh < 2 * H; ++oh) {
      const auto& a = ty[static_cast<size_t>(oh)];
      const T ly = static_cast<T>(a.l1), hy = T(1) - ly;
      for (int64_t ow = 0; ow < 2 * W; ++ow) {
        const auto& b = tx[static_cast<size_t>(ow)];
        const T lx = static_cast<T>(b.l1), hx = T(1) - lx;
        dst[oh * 2 * W + ow] = hy * (hx * src[a.i0 * W + b.i0] + lx * src[a.i0 * W + b.i1]) +
                               ly * (hx * src[a.i1 * W + b.i0] + lx * src[a.i1 * W + b.i1]);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  const int64_t N = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  Tensor<T> gin(input_shape);
  std::vector<Tap> ty, tx;
  for (int64_t o = 0; o < 2 * H; ++o) ty.push_back(upsample_tap(o, H));
  for (int64_t o = 0; o < 2 * W; ++o) tx.push_back(upsample_tap(o, W));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* go = grad_out.data() + nc * 4 * H * W;
    T* dst = gin.data() + nc * H * W;
    for (int64_t oh = 0; oh < 2 * H; ++oh) {
      const auto& a = ty[static_cast<size_t>(oh)];
      const T ly = static_cast<T>(a.l1), hy = T(1) - ly;
      for (int64_t ow = 0; ow < 2 * W; ++ow) {
        const auto& b = tx[static_cast<size_t>(ow)];
        const T lx = static_cast<T>(b.l1), hx = T(1) - lx;
        const T gv = go[oh * 2 * W + ow];
        dst[a.i0 * W + b.i0] += hy * hx * gv;
        dst[a.i0 * W + b.i1] += hy * lx * gv;
        dst[a.i1 * W + b.i0] += ly * hx * gv;
        dst[a.i1 * W + b.i1] += ly * lx * gv;
      }
    }
  }
  return gin;
}

#define TAP_INSTANTIATE(T)                                                                                        \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeom&);       \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, bool, const Tensor<T>&,               \
                                        const ConvGeom&, bool, bool);                                             \
  template T bilinear_zero_pad(const T*, int64_t, int64_t, T, T);                                                 \
  template Tensor<T> deform_conv_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         const DeformGeom&);                                                      \
  template DeformGrads<T> deform_conv_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool,        \
                                               const Tensor<T>&, const DeformGeom&);                              \
  template Tensor<T> upsample2x_forward(const Tensor<T>&);                                                        \
  template Tensor<T> upsample2x_backward(const Tensor<T>&, const Shape&);

TAP_INSTANTIATE(float)
TAP_INSTANTIATE(double)
#undef TAP_INSTANTIATE

}  // namespace tap::kernels
