#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "tap/errors.hpp"
#include "tap/noise.hpp"

using namespace tap;

namespace {

struct Moments {
  double mean, var;
};

Moments moments(const Tensor<double>& t) {
  double s = 0, s2 = 0;
  for (double v : t.span()) s += v;
  const double m = s / static_cast<double>(t.numel());
  for (double v : t.span()) s2 += (v - m) * (v - m);
  return {m, s2 / static_cast<double>(t.numel() - 1)};
}

}  // namespace

TEST_CASE("awgn sampler") {
  Rng rng(1);
  const auto z = sample_awgn<double>({1000}, 0.0, rng);
  for (double v : z.span()) CHECK(v == 0.0);

  const double sigma = 30.0 / 255.0;
  Rng a(7), b(7);
  const auto n = sample_awgn<double>({1000000}, sigma, a);
  const auto m = moments(n);
  CHECK(std::abs(std::sqrt(m.var) / sigma - 1.0) < 0.01);
  CHECK(std::abs(m.mean) < 3.0 * sigma / 1000.0);
  CHECK(bitwise_equal(n, sample_awgn<double>({1000000}, sigma, b)));
}

TEST_CASE("poisson-gaussian degenerate cases") {
  Rng rng(2);
  const Tensor<double> zero({1000});
  const auto n = sample_poisson_gaussian(zero, 0.01, 0.0, rng);
  for (double v : n.span()) CHECK(v == 0.0);
  // alpha == 0 reduces to read noise only.
  const Tensor<double> half({200000}, 0.5);
  const auto g = sample_poisson_gaussian(half, 0.0, 0.02, rng);
  CHECK(std::abs(std::sqrt(moments(g).var) / 0.02 - 1.0) < 0.01);
}

TEST_CASE("poisson-gaussian variance at one intensity") {
  Rng rng(3);
  const Tensor<double> x({1000000}, 0.5);
  const auto n = sample_poisson_gaussian(x, 0.01, 0.005, rng);
  const auto m = moments(n);
  const double want = 0.01 * 0.5 + 0.005 * 0.005;
  CHECK(std::abs(m.var / want - 1.0) < 0.02);
  CHECK(std::abs(m.mean) < 3.0 * std::sqrt(want) / 1000.0);
}

TEST_CASE("poisson-gaussian variance is affine in intensity") {
  const double alpha = 0.01, delta = 0.05;
  Rng rng(4);
  std::vector<double> xs, vs;
  for (int k = 1; k <= 9; ++k) {
    const double x = 0.1 * k;
    const Tensor<double> c({1000000}, x);
    xs.push_back(x);
    vs.push_back(moments(sample_poisson_gaussian(c, alpha, delta, rng)).var);
  }
  double mx = 0, mv = 0;
  for (size_t i = 0; i < xs.size(); ++i) mx += xs[i], mv += vs[i];
  mx /= 9, mv /= 9;
  double sxy = 0, sxx = 0;
  for (size_t i = 0; i < xs.size(); ++i) sxy += (xs[i] - mx) * (vs[i] - mv), sxx += (xs[i] - mx) * (xs[i] - mx);
  const double slope = sxy / sxx, icpt = mv - slope * mx;
  CHECK(std::abs(slope / alpha - 1.0) < 0.03);
  CHECK(std::abs(icpt / (delta * delta) - 1.0) < 0.05);
}

TEST_CASE("noise descriptors round trip") {
  const auto a = NoiseModel::parse("awgn:sigma=30/255", 5);
  CHECK(a.is_awgn());
  CHECK(std::get<Awgn>(a.params).sigma == 30.0 / 255.0);
  CHECK(NoiseModel::parse(a.descriptor()).descriptor() == a.descriptor());
  const auto p = NoiseModel::poisson_gaussian(0.01, 0.002, 9);
  const auto back = NoiseModel::from_json(p.to_json());
  CHECK(back.descriptor() == p.descriptor());
  CHECK(back.seed == 9);
  CHECK_THROWS_AS(NoiseModel::parse("awgn:sigma=-1"), ConfigError);
  CHECK_THROWS_AS(NoiseModel::parse("gauss:sigma=1"), ConfigError);
  CHECK_THROWS_AS(NoiseModel::parse("pg:alpha=0.1"), ConfigError);
  CHECK_THROWS_AS(NoiseModel::parse("awgn"), ConfigError);
}

TEST_CASE("calibration table") {
  const auto t = CalibrationTable::parse("# iso alpha delta\n1600 0.004 0.001\n3200 0.008 0.002  # hot\n\n");
  CHECK(t.entries().size() == 2);
  CHECK(t.lookup(3200).alpha == 0.008);
  const auto m = t.model_for(1600, 3);
  CHECK(std::get<PoissonGaussian>(m.params).delta == 0.001);
  CHECK_THROWS_AS(t.lookup(800), ConfigError);
  CHECK_THROWS_AS(CalibrationTable::parse("1600 0.1 0.1\n1600 0.2 0.2\n"), ConfigError);
  CHECK_THROWS_AS(CalibrationTable::parse("1600 0.1\n"), ConfigError);
  CHECK_THROWS_AS(CalibrationTable::load("/nonexistent/table.txt"), DataError);
}

TEST_CASE("pseudo pairs: identity denoiser and zero noise") {
  Rng rng(5);
  const auto v = uniform_tensor<float>({3, 3, 8, 8}, 1.f, rng);
  Tensor<float> in = v;
  for (auto& x : in.span()) x = std::abs(x);
  const auto set = make_pseudo_pairs({"a"}, {in}, [](const Tensor<float>& t) { return t; }, NoiseModel::awgn(0.0), 1);
  CHECK(bitwise_equal(set.clean[0], in));
  CHECK(bitwise_equal(set.noisy[0], in));
  CHECK(set.source_step == 1);
}

TEST_CASE("pseudo pairs: clamped clean, residual statistics, reproducibility") {
  const double sigma = 25.0 / 255.0;
  Tensor<float> video({4, 3, 64, 64}, 0.5f);
  video[0] = 1.7f;
  auto den = [](const Tensor<float>& t) { return t; };
  const auto m = NoiseModel::awgn(sigma, 11);
  std::vector<Tensor<float>> vids(4, video);
  const auto set = make_pseudo_pairs({"a", "b", "c", "d"}, vids, den, m, 2);
  CHECK(set.clean[0][0] == 1.f);
  double s = 0, s2 = 0;
  int64_t n = 0;
  for (size_t i = 0; i < set.size(); ++i)
    for (int64_t k = 0; k < set.clean[i].numel(); ++k) {
      const double r = set.noisy[i][k] - set.clean[i][k];
      s += r, s2 += r * r, ++n;
    }
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  CHECK(n >= 190000);
  CHECK(std::abs(sd / sigma - 1.0) < 0.02);
  // different videos get different noise
  CHECK_FALSE(bitwise_equal(set.noisy[0], set.noisy[1]));
  const auto again = make_pseudo_pairs({"a", "b", "c", "d"}, vids, den, m, 2);
  for (size_t i = 0; i < set.size(); ++i) CHECK(bitwise_equal(set.noisy[i], again.noisy[i]));
  auto fresh = set;
  recorrupt(fresh, 1);
  CHECK_FALSE(bitwise_equal(fresh.noisy[0], set.noisy[0]));
  CHECK_THROWS_AS(make_pseudo_pairs({"a"}, {video}, [](const Tensor<float>&) { return Tensor<float>({1, 3, 8, 8}); },
                                    m, 1),
                  DataError);
}

TEST_CASE("pseudo pairs persist exactly") {
  Rng rng(6);
  Tensor<float> video({2, 4, 8, 8});
  for (auto& x : video.span()) x = std::uniform_real_distribution<float>(0.f, 1.f)(rng);
  auto set = make_pseudo_pairs({"clip0"}, {video}, [](const Tensor<float>& t) { return t; },
                               NoiseModel::poisson_gaussian(0.01, 0.003, 4), 1);
  set.provenance = {{"checkpoint", "step0.ckpt"}};
  const auto dir = std::filesystem::temp_directory_path() / "tap_test_pairs";
  std::filesystem::remove_all(dir);
  save_pseudo_pairs(dir, set);
  const auto back = load_pseudo_pairs(dir);
  CHECK(back.source_step == 1);
  CHECK(back.model.descriptor() == set.model.descriptor());
  CHECK(back.provenance["checkpoint"] == "step0.ckpt");
  CHECK(bitwise_equal(back.clean[0], set.clean[0]));
  CHECK(bitwise_equal(back.noisy[0], set.noisy[0]));
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_pseudo_pairs(dir), DataError);
}
