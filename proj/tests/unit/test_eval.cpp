#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "tap/errors.hpp"
#include "tap/eval.hpp"
#include "tap/noise.hpp"

using namespace tap;

namespace {

// Same construction as tests/oracles/ssim_oracle.py.
Tensor<double> texture(int64_t C, int64_t H, int64_t W) {
  Tensor<double> t({C, H, W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        t[(c * H + y) * W + x] = 0.5 + 0.3 * std::sin(0.3 * x + 0.2 * y + c) + 0.1 * std::cos(0.7 * y - 0.4 * x);
  return t;
}

Tensor<double> perturbed(const Tensor<double>& a) {
  Tensor<double> t = a;
  const int64_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) t[(c * H + y) * W + x] += 0.08 * std::sin(1.1 * x - 0.9 * y + 2 * c);
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("psnr") {
  const Tensor<double> a({3, 8, 8}, 0.3);
  CHECK(psnr(a, a) == kPsnrCap);
  const Tensor<double> b({3, 8, 8}, 0.4);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  const Tensor<double> z({1, 4, 4}, 0.0), o({1, 4, 4}, 1.0);
  CHECK(psnr(z, o, 255.0) == doctest::Approx(48.130803608679).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(a, Tensor<double>({3, 8, 7})), ConfigError);
  // scale invariance
  Rng rng(1);
  Tensor<double> x({3, 16, 16}), y({3, 16, 16});
  for (auto& v : x.span()) v = std::uniform_real_distribution<double>(0, 1)(rng);
  for (auto& v : y.span()) v = std::uniform_real_distribution<double>(0, 1)(rng);
  Tensor<double> xs = x, ys = y;
  xs *= 255.0;
  ys *= 255.0;
  CHECK(std::abs(psnr(x, y) - psnr(xs, ys, 255.0)) < 1e-9);
}

TEST_CASE("ssim against scikit-image") {
  const auto a = texture(3, 24, 31);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, perturbed(a)) == doctest::Approx(0.893673972677).epsilon(1e-9));
  Tensor<double> neg = a;
  for (auto& v : neg.span()) v = 1.0 - v;
  const double sn = ssim(a, neg);
  CHECK(sn == doctest::Approx(-0.722157123930).epsilon(1e-9));
  CHECK(sn < 0.5);
  const auto g = texture(1, 16, 16);
  CHECK(ssim(g, perturbed(g)) == doctest::Approx(0.892313735766).epsilon(1e-9));
  // 1 x C x H x W is accepted too
  CHECK(ssim(g.reshaped({1, 1, 16, 16}), perturbed(g).reshaped({1, 1, 16, 16})) == ssim(g, perturbed(g)));
}

TEST_CASE("ssim of constant images has a closed form") {
  const Tensor<double> c({1, 16, 16}, 0.2), d({1, 16, 16}, 0.7);
  const double c1 = 1e-4;
  const double want = (2 * 0.2 * 0.7 + c1) / (0.2 * 0.2 + 0.7 * 0.7 + c1);
  CHECK(ssim(c, d) == doctest::Approx(want).epsilon(1e-12));
  CHECK(ssim(c, d) == doctest::Approx(0.528390869647).epsilon(1e-9));
}

TEST_CASE("ssim is symmetric and rejects small images") {
  Rng rng(2);
  Tensor<float> x({3, 20, 20}), y({3, 20, 20});
  for (auto& v : x.span()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  for (auto& v : y.span()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  CHECK(ssim(x, y) == ssim(y, x));
  CHECK(ssim(x, y) >= -1.0);
  CHECK(ssim(x, y) <= 1.0);
  CHECK_THROWS_AS(ssim(Tensor<float>({3, 10, 20}), Tensor<float>({3, 10, 20})), ConfigError);
}

TEST_CASE("temporal coherence") {
  CHECK(temporal_coherence(Tensor<double>({5, 3, 8, 8}, 0.4)) == 0.0);
  Tensor<double> ramp({4, 1, 8, 8});
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t i = 0; i < 64; ++i) ramp[t * 64 + i] = 0.3 + 0.01 * static_cast<double>(t);
  CHECK(temporal_coherence(ramp) == doctest::Approx(0.01).epsilon(1e-9));
  CHECK_THROWS_AS(temporal_coherence(Tensor<double>({1, 3, 8, 8})), ConfigError);

  const double sigma = 30.0 / 255.0;
  Rng rng(3);
  Tensor<double> vid({12, 3, 192, 192}, 0.5);
  vid += sample_awgn<double>(vid.shape(), sigma, rng);
  CHECK(vid.numel() / 12 * 11 >= 1000000);
  const double want = 2.0 * sigma / std::sqrt(std::numbers::pi);
  CHECK(std::abs(temporal_coherence(vid) / want - 1.0) < 0.02);
}

TEST_CASE("report emission") {
  MetricReport r;
  r.step = 0;
  Tensor<float> clean({3, 3, 16, 16}, 0.5f), den({3, 3, 16, 16}, 0.6f);
  evaluate_video(r, "clip", den, clean);
  CHECK(r.frames.size() == 3);
  CHECK(r.mean_psnr() == doctest::Approx(20.0).epsilon(1e-5));
  const auto dir = std::filesystem::temp_directory_path() / "tap_test_report";
  std::filesystem::remove_all(dir);
  emit_report({r}, dir / "m.csv");
  const auto text = slurp(dir / "m.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);  // header + 3 + summary
  CHECK(text.find("0,ALL,mean,") != std::string::npos);

  std::vector<MetricReport> steps;
  for (int s = 0; s < 4; ++s) {
    MetricReport q = r;
    q.step = s;
    steps.push_back(q);
  }
  emit_report(steps, dir / "all.csv", dir / "curve.csv");
  const auto curve = slurp(dir / "curve.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 5);
  const auto first = slurp(dir / "all.csv"), first_json = slurp(dir / "all.csv.json");
  emit_report(steps, dir / "all.csv", dir / "curve.csv");
  CHECK(slurp(dir / "all.csv") == first);
  CHECK(slurp(dir / "all.csv.json") == first_json);
  CHECK(slurp(dir / "curve.csv") == curve);
  CHECK_THROWS_AS(emit_report({}, dir / "x.csv"), ConfigError);
  CHECK_THROWS_AS(emit_report({r}, "/proc/nonexistent/x.csv"), DataError);
  std::filesystem::remove_all(dir);
}
