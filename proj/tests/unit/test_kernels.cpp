#include <cmath>
#include <random>

#include "doctest.h"
#include "tap/kernels.hpp"
#include "test_util.hpp"

using namespace tap;
using namespace tap::kernels;
using tap::testing::fd_rel_error;
using tap::testing::random_tensor;
using tap::testing::sin_tensor;
using tap::testing::weighted_sum;

namespace {

// Direct definition of bilinear sampling with zeros outside the image.
double oracle_sample(const Tensor<double>& x, int64_t n, int64_t c, double y, double xx) {
  const int64_t H = x.dim(2), W = x.dim(3);
  const auto y0 = static_cast<int64_t>(std::floor(y)), x0 = static_cast<int64_t>(std::floor(xx));
  double s = 0.0;
  for (int64_t dy = 0; dy <= 1; ++dy)
    for (int64_t dx = 0; dx <= 1; ++dx) {
      const int64_t yy = y0 + dy, xi = x0 + dx;
      if (yy < 0 || yy >= H || xi < 0 || xi >= W) continue;
      const double wy = 1.0 - std::abs(y - static_cast<double>(yy));
      const double wx = 1.0 - std::abs(xx - static_cast<double>(xi));
      s += wy * wx * x.at(n, c, yy, xi);
    }
  return s;
}

Tensor<double> oracle_deform(const Tensor<double>& x, const Tensor<double>& off, const Tensor<double>& w,
                             const Tensor<double>& b, int64_t K, int64_t pad, int64_t G) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), Co = w.dim(0);
  Tensor<double> out({N, Co, H, W});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < Co; ++o)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t ww = 0; ww < W; ++ww) {
          double s = b.empty() ? 0.0 : b[o];
          for (int64_t c = 0; c < C; ++c) {
            const int64_t g = c / (C / G);
            for (int64_t ki = 0; ki < K; ++ki)
              for (int64_t kj = 0; kj < K; ++kj) {
                const int64_t k = ki * K + kj;
                const double dy = off.at(n, 2 * (g * K * K + k), h, ww);
                const double dx = off.at(n, 2 * (g * K * K + k) + 1, h, ww);
                const double py = static_cast<double>(h - pad + ki) + dy;
                const double px = static_cast<double>(ww - pad + kj) + dx;
                s += w.at(o, c, ki, kj) * oracle_sample(x, n, c, py, px);
              }
          }
          out.at(n, o, h, ww) = s;
        }
  return out;
}

Tensor<double> oracle_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int64_t stride,
                           int64_t pad, int64_t groups) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), Co = w.dim(0), K = w.dim(2);
  const int64_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  const int64_t cin_g = C / groups, cout_g = Co / groups;
  Tensor<double> out({N, Co, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < Co; ++o)
      for (int64_t h = 0; h < Ho; ++h)
        for (int64_t ww = 0; ww < Wo; ++ww) {
          double s = b.empty() ? 0.0 : b[o];
          const int64_t g = o / cout_g;
          for (int64_t ci = 0; ci < cin_g; ++ci)
            for (int64_t ki = 0; ki < K; ++ki)
              for (int64_t kj = 0; kj < K; ++kj) {
                const int64_t y = h * stride - pad + ki, xx = ww * stride - pad + kj;
                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                s += w.at(o, ci, ki, kj) * x.at(n, g * cin_g + ci, y, xx);
              }
          out.at(n, o, h, ww) = s;
        }
  return out;
}

double sum(const Tensor<double>& t) {
  double s = 0.0;
  for (auto v : t.span()) s += v;
  return s;
}

}  // namespace

TEST_CASE("deform conv with uniform integer offset shifts with zero fill") {
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> off({1, 2, 3, 3});
  for (int64_t i = 9; i < 18; ++i) off[i] = 1.0;  // dx = 1
  Tensor<double> w({1, 1, 1, 1}, 1.0);
  const auto out = deform_conv_forward(x, off, w, Tensor<double>(), DeformGeom{1, 0, 1});
  const std::vector<double> expect{2, 3, 0, 5, 6, 0, 8, 9, 0};
  for (int64_t i = 0; i < 9; ++i) CHECK(out[i] == expect[static_cast<size_t>(i)]);
}

TEST_CASE("deform conv with half-pixel offset averages horizontal neighbours") {
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> off({1, 2, 3, 3});
  for (int64_t i = 9; i < 18; ++i) off[i] = 0.5;
  Tensor<double> w({1, 1, 1, 1}, 1.0);
  const auto out = deform_conv_forward(x, off, w, Tensor<double>(), DeformGeom{1, 0, 1});
  const auto ref = oracle_deform(x, off, w, Tensor<double>(), 1, 0, 1);
  const std::vector<double> expect{1.5, 2.5, 1.5, 4.5, 5.5, 3.0, 7.5, 8.5, 4.5};
  for (int64_t i = 0; i < 9; ++i) {
    CHECK(out[i] == doctest::Approx(expect[static_cast<size_t>(i)]).epsilon(1e-15));
    CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-15));
  }
}

TEST_CASE("deform conv matches brute-force oracle with groups and fractional offsets") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const auto x = random_tensor<double>({2, 4, 5, 6}, rng);
    const auto off = random_tensor<double>({2, 2 * 9 * 2, 5, 6}, rng, -2.5, 2.5);
    const auto w = random_tensor<double>({3, 4, 3, 3}, rng);
    const auto b = random_tensor<double>({3}, rng);
    const auto out = deform_conv_forward(x, off, w, b, DeformGeom{3, 1, 2});
    const auto ref = oracle_deform(x, off, w, b, 3, 1, 2);
    CHECK(max_abs_diff(out, ref) < 1e-12);
  }
}

TEST_CASE("deform conv matches torchvision reference values") {
  // Frozen from tests/oracles/dcn_oracle.py.
  const auto x = sin_tensor<double>({1, 4, 5, 6}, 0.0);
  const auto off = sin_tensor<double>({1, 36, 5, 6}, 1.0, 1.7);
  const auto w = sin_tensor<double>({3, 4, 3, 3}, 2.0, 0.5);
  const auto b = sin_tensor<double>({3}, 3.0);
  const auto out = deform_conv_forward(x, off, w, b, DeformGeom{3, 1, 2});
  CHECK(sum(out) == doctest::Approx(-15.845008050676).epsilon(1e-10));
  CHECK(out[0] == doctest::Approx(1.199963208092).epsilon(1e-10));
  CHECK(out[7] == doctest::Approx(-0.967814248984).epsilon(1e-10));
  CHECK(out[31] == doctest::Approx(1.090762419535).epsilon(1e-10));
  CHECK(out[55] == doctest::Approx(0.050543186745).epsilon(1e-9));
  CHECK(out[89] == doctest::Approx(0.141211116526).epsilon(1e-9));

  const auto probe = sin_tensor<double>(out.shape(), 4.0);
  const auto g = deform_conv_backward(x, off, w, true, probe, DeformGeom{3, 1, 2});
  CHECK(sum(g.input) == doctest::Approx(-0.604229244112).epsilon(1e-9));
  CHECK(sum(g.offset) == doctest::Approx(2.449110240198).epsilon(1e-9));
  CHECK(sum(g.weight) == doctest::Approx(2.733123179448).epsilon(1e-9));
}

TEST_CASE("zero offsets reduce deform conv to ordinary convolution") {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({1, 4, 7, 5}, rng);
  const auto w = random_tensor<double>({2, 4, 3, 3}, rng);
  const auto b = random_tensor<double>({2}, rng);
  const auto d = deform_conv_forward(x, Tensor<double>({1, 2 * 9 * 4, 7, 5}), w, b, DeformGeom{3, 1, 4});
  const auto c = conv2d_forward(x, w, b, ConvGeom{1, 1, 1});
  CHECK(max_abs_diff(d, c) < 1e-12);
}

TEST_CASE("deform conv gradients match central differences") {
  std::mt19937_64 rng(5);
  auto x = random_tensor<double>({1, 4, 6, 5}, rng);
  auto off = random_tensor<double>({1, 2 * 9 * 2, 6, 5}, rng, -1.5, 1.5);
  // Keep sampling positions away from integer grid lines where bilinear weights have kinks.
  for (auto& v : off.span()) {
    const double f = v - std::floor(v);
    if (f < 0.05 || f > 0.95) v += 0.3;
  }
  auto w = random_tensor<double>({3, 4, 3, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  const DeformGeom geom{3, 1, 2};
  const auto probe = random_tensor<double>({1, 3, 6, 5}, rng);
  const auto g = deform_conv_backward(x, off, w, true, probe, geom);
  auto f = [&] { return weighted_sum(deform_conv_forward(x, off, w, b, geom), probe); };
  CHECK(fd_rel_error(x, g.input, f) < 1e-6);
  CHECK(fd_rel_error(off, g.offset, f) < 1e-6);
  CHECK(fd_rel_error(w, g.weight, f) < 1e-6);
  CHECK(fd_rel_error(b, g.bias, f) < 1e-6);
}

TEST_CASE("convolution forward matches direct loops for strides and groups") {
  std::mt19937_64 rng(9);
  struct Case {
    int64_t cin, cout, k, stride, pad, groups;
  };
  for (const Case c : {Case{3, 4, 3, 1, 1, 1}, Case{4, 6, 2, 2, 0, 1}, Case{6, 6, 3, 1, 1, 6}, Case{4, 8, 1, 1, 0, 2},
                       Case{4, 4, 3, 1, 1, 2}}) {
    const auto x = random_tensor<double>({2, c.cin, 6, 8}, rng);
    const auto w = random_tensor<double>({c.cout, c.cin / c.groups, c.k, c.k}, rng);
    const auto b = random_tensor<double>({c.cout}, rng);
    const ConvGeom g{c.stride, c.pad, c.groups};
    CHECK(max_abs_diff(conv2d_forward(x, w, b, g), oracle_conv(x, w, b, c.stride, c.pad, c.groups)) < 1e-12);
    CHECK(max_abs_diff(conv2d_forward(x, w, Tensor<double>(), g),
                       oracle_conv(x, w, Tensor<double>(), c.stride, c.pad, c.groups)) < 1e-12);
  }
}

TEST_CASE("convolution gradients match central differences") {
  std::mt19937_64 rng(13);
  for (const auto& g : {ConvGeom{1, 1, 1}, ConvGeom{2, 0, 1}, ConvGeom{1, 1, 4}, ConvGeom{1, 0, 1}}) {
    const int64_t k = g.stride == 2 ? 2 : (g.pad == 0 ? 1 : 3);
    auto x = random_tensor<double>({2, 4, 6, 6}, rng);
    auto w = random_tensor<double>({4, 4 / g.groups, k, k}, rng);
    auto b = random_tensor<double>({4}, rng);
    const auto out = conv2d_forward(x, w, b, g);
    const auto probe = random_tensor<double>(out.shape(), rng);
    const auto gr = conv2d_backward(x, w, true, probe, g, true, true);
    auto f = [&] { return weighted_sum(conv2d_forward(x, w, b, g), probe); };
    CHECK(fd_rel_error(x, gr.input, f) < 1e-6);
    CHECK(fd_rel_error(w, gr.weight, f) < 1e-6);
    CHECK(fd_rel_error(b, gr.bias, f) < 1e-6);
  }
}

TEST_CASE("bilinear 2x upsampling matches reference and its adjoint") {
  const auto x = sin_tensor<double>({1, 2, 3, 4}, 0.5);
  const auto u = upsample2x_forward(x);
  REQUIRE(u.shape() == Shape{1, 2, 6, 8});
  CHECK(sum(u) == doctest::Approx(20.924703857798).epsilon(1e-10));
  CHECK(u[0] == doctest::Approx(0.479425538604).epsilon(1e-10));
  CHECK(u[5] == doctest::Approx(0.959145908193).epsilon(1e-10));
  CHECK(u[17] == doctest::Approx(0.787122950547).epsilon(1e-10));
  CHECK(u[40] == doctest::Approx(-0.313054359103).epsilon(1e-10));
  CHECK(u[63] == doctest::Approx(0.063685510822).epsilon(1e-9));

  std::mt19937_64 rng(2);
  auto xx = random_tensor<double>({1, 2, 3, 4}, rng);
  const auto probe = random_tensor<double>({1, 2, 6, 8}, rng);
  const auto g = upsample2x_backward(probe, xx.shape());
  CHECK(fd_rel_error(xx, g, [&] { return weighted_sum(upsample2x_forward(xx), probe); }) < 1e-6);
}

TEST_CASE("bilinear sampling at integer points is exact") {
  const std::vector<double> plane{1, 2, 3, 4, 5, 6};
  CHECK(bilinear_zero_pad(plane.data(), 2, 3, 1.0, 2.0) == 6.0);
  CHECK(bilinear_zero_pad(plane.data(), 2, 3, 0.0, 0.0) == 1.0);
  CHECK(bilinear_zero_pad(plane.data(), 2, 3, -1.0, 0.0) == 0.0);
  CHECK(bilinear_zero_pad(plane.data(), 2, 3, 0.0, 3.0) == 0.0);
  CHECK(bilinear_zero_pad(plane.data(), 2, 3, -0.5, 0.0) == doctest::Approx(0.5));
}
