#include <cmath>
#include <random>

#include "doctest.h"
#include "tap/alignment.hpp"
#include "tap/errors.hpp"
#include "tap/ops.hpp"
#include "test_util.hpp"

using namespace tap;
using tap::testing::fd_rel_error;
using tap::testing::random_tensor;
using tap::testing::weighted_sum;

namespace {

TemporalModuleConfig bottom_cfg(int64_t C = 8, int64_t T = 3) {
  TemporalModuleConfig c;
  c.level = 3;
  c.channels = C;
  c.deform_groups = deform_groups_for(C, false);
  c.frames = T;
  return c;
}

TemporalModuleConfig upper_cfg(int64_t C = 8, int64_t lowerC = 16, int64_t T = 3) {
  TemporalModuleConfig c = bottom_cfg(C, T);
  c.level = 2;
  c.lower_channels = lowerC;
  c.lower_deform_groups = deform_groups_for(lowerC, false);
  return c;
}

std::vector<Var<double>> frames(int64_t T, Shape s, std::mt19937_64& rng) {
  std::vector<Var<double>> v;
  for (int64_t i = 0; i < T; ++i) v.emplace_back(random_tensor<double>(s, rng));
  return v;
}

}  // namespace

TEST_CASE("deformable groups follow the profile rule") {
  CHECK(deform_groups_for(64, true) == 8);
  CHECK(deform_groups_for(8, false) == 2);
  CHECK(deform_groups_for(16, false) == 4);
  CHECK(deform_groups_for(64, false) == 8);
  CHECK(deform_groups_for(4, false) == 1);
}

TEST_CASE("learn_offsets starts at zero and has 2*K*K*G channels") {
  ParamStore<double> store;
  Rng rng(1);
  TemporalModule<double> tm(bottom_cfg(), store, rng);
  std::mt19937_64 r(2);
  Var<double> f(random_tensor<double>({1, 8, 16, 16}, r));
  const auto off = tm.learn_offsets(f, f);
  CHECK(off.shape() == Shape{1, 2 * 9 * 2, 16, 16});
  for (auto v : off.value().span()) CHECK(v == 0.0);
  CHECK_THROWS_AS(tm.learn_offsets(f, Var<double>(Tensor<double>({1, 8, 8, 8}))), ConfigError);
}

TEST_CASE("refine_offsets is the identity on raw offsets at initialization") {
  ParamStore<double> store;
  Rng rng(3);
  TemporalModule<double> up(upper_cfg(), store, rng);
  std::mt19937_64 r(4);
  Var<double> raw(random_tensor<double>({1, 36, 8, 8}, r));
  Var<double> zeros(Tensor<double>({1, 72, 4, 4}));
  CHECK(max_abs_diff(up.refine_offsets(raw, &zeros).value(), raw.value()) == 0.0);
  CHECK_THROWS_AS(up.refine_offsets(raw, nullptr), ConfigError);

  ParamStore<double> s2;
  TemporalModule<double> bottom(bottom_cfg(), s2, rng);
  CHECK(max_abs_diff(bottom.refine_offsets(raw, nullptr).value(), raw.value()) == 0.0);
  CHECK_THROWS_AS(bottom.refine_offsets(raw, &zeros), ConfigError);
}

TEST_CASE("transferred offsets are upsampled and doubled before refinement") {
  ParamStore<double> store;
  Rng rng(5);
  TemporalModule<double> up(upper_cfg(), store, rng);
  // Route transferred channel j (of 72) to output channel j so the refine conv exposes its input.
  auto& w = up.offset_refine().weight.mutable_value();
  w.fill(0.0);
  for (int64_t o = 0; o < 36; ++o) w.at(o, 36 + o, 1, 1) = 1.0;
  Tensor<double> lower({1, 72, 4, 4});
  for (int64_t h = 0; h < 4; ++h)
    for (int64_t x = 0; x < 4; ++x) lower.at(0, 0, h, x) = 1.0;  // uniform (dy, dx) = (1, 0) on tap 0
  Var<double> lv(lower);
  const auto out = up.refine_offsets(Var<double>(Tensor<double>({1, 36, 8, 8})), &lv).value();
  for (int64_t h = 0; h < 8; ++h)
    for (int64_t x = 0; x < 8; ++x) {
      CHECK(out.at(0, 0, h, x) == 2.0);
      CHECK(out.at(0, 1, h, x) == 0.0);
    }
}

TEST_CASE("offsets are clipped to the configured bound") {
  ParamStore<double> store;
  Rng rng(6);
  auto cfg = bottom_cfg();
  TemporalModule<double> half(cfg, store, rng);
  Tensor<double> big({1, 36, 8, 8}, 100.0);
  const auto a = half.clip_offsets(Var<double>(big));
  for (auto v : a.value().span()) CHECK(v == 4.0);
  cfg.offset_clip = 32.0;
  ParamStore<double> s2;
  TemporalModule<double> fixed(cfg, s2, rng);
  const auto b = fixed.clip_offsets(Var<double>(big));
  for (auto v : b.value().span()) CHECK(v == 32.0);
}

TEST_CASE("zero offsets with identity fuse conv reduce alignment to a plain conv") {
  ParamStore<double> store;
  Rng rng(7);
  TemporalModule<double> tm(bottom_cfg(), store, rng);
  auto& fw = tm.feat_refine().weight.mutable_value();
  fw.fill(0.0);
  for (int64_t c = 0; c < 8; ++c) fw.at(c, c, 1, 1) = 1.0;
  tm.feat_refine().bias.mutable_value().fill(0.0);
  std::mt19937_64 r(8);
  Var<double> f(random_tensor<double>({1, 8, 8, 8}, r));
  const auto out = tm.align_and_refine(f, Var<double>(Tensor<double>({1, 36, 8, 8})), nullptr).value();
  const auto ref = kernels::conv2d_forward(f.value(), tm.dcn_weight().value(), tm.dcn_bias().value(),
                                           kernels::ConvGeom{1, 1, 1});
  CHECK(max_abs_diff(out, ref) < 1e-12);
}

TEST_CASE("fuse_frames checks the count and is order sensitive") {
  ParamStore<double> store;
  Rng rng(9);
  TemporalModule<double> tm(bottom_cfg(8, 3), store, rng);
  std::mt19937_64 r(10);
  auto fs = frames(3, {1, 8, 8, 8}, r);
  CHECK(tm.fuse_frames(fs).shape() == Shape{1, 8, 8, 8});
  auto two = std::vector<Var<double>>(fs.begin(), fs.begin() + 2);
  try {
    tm.fuse_frames(two);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("T = 3") != std::string::npos);
  }
  auto swapped = fs;
  std::swap(swapped[0], swapped[2]);
  CHECK(max_abs_diff(tm.fuse_frames(fs).value(), tm.fuse_frames(swapped).value()) > 1e-6);
  tm.frame_fuse().weight.mutable_value().fill(0.0);
  tm.frame_fuse().bias.mutable_value().fill(0.0);
  const auto z = tm.fuse_frames(fs);
  for (auto v : z.value().span()) CHECK(v == 0.0);
}

TEST_CASE("gated residual arithmetic") {
  Var<double> c(Tensor<double>({1, 1, 1, 1}, 2.0)), f(Tensor<double>({1, 1, 1, 1}, 4.0));
  Var<double> b(Tensor<double>({1}, 0.5));
  CHECK(gated_residual(c, f, b).value()[0] == 4.0);
  Var<double> z(Tensor<double>({1}, 0.0));
  CHECK(gated_residual(c, f, z).value()[0] == 2.0);
  CHECK_THROWS_AS(gated_residual(c, f, Var<double>(Tensor<double>({2}))), ConfigError);
}

TEST_CASE("fresh module is an exact no-op on the central features") {
  for (int64_t T : {3, 5}) {
    ParamStore<float> store;
    Rng rng(11);
    auto cfg = bottom_cfg(16, T);
    TemporalModule<float> tm(cfg, store, rng);
    Rng r(12);
    std::vector<Var<float>> fs;
    for (int64_t i = 0; i < T; ++i) fs.emplace_back(uniform_tensor<float>({2, 16, 8, 8}, 3.f, r));
    const auto out = tm.forward(fs, nullptr);
    CHECK(bitwise_equal(out.skip.value(), fs[static_cast<size_t>(T / 2)].value()));
    CHECK(out.for_upper.offsets.size() == static_cast<size_t>(T));
  }
}

TEST_CASE("module gradients match central differences once the gate is open") {
  ParamStore<double> store;
  Rng rng(13);
  TemporalModule<double> tm(upper_cfg(4, 8, 3), store, rng);
  std::mt19937_64 r(14);
  // Small random weights on the zero-initialized layers so offsets are generic.
  for (const auto& n : store.names()) {
    if (n.find("offset_conv2") != std::string::npos)
      for (auto& v : store.get(n).mutable_value().span()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(r);
  }
  for (auto& v : tm.beta().mutable_value().span()) v = 0.7;
  auto fs = frames(3, {1, 4, 6, 6}, r);
  AlignmentTransfer<double> lower;
  for (int i = 0; i < 3; ++i) {
    lower.offsets.emplace_back(random_tensor<double>({1, 2 * 9 * 2, 3, 3}, r, -0.4, 0.4));
    lower.aligned.emplace_back(random_tensor<double>({1, 8, 3, 3}, r));
  }
  const auto probe = random_tensor<double>({1, 4, 6, 6}, r);
  store.zero_grad();
  backward(tm.forward(fs, &lower).skip, &probe);
  auto f = [&] {
    NoGradGuard g;
    return weighted_sum(tm.forward(fs, &lower).skip.value(), probe);
  };
  for (const auto& name : store.names()) {
    CAPTURE(name);
    auto& p = store.get(name);
    const Tensor<double> g = p.grad();
    REQUIRE(g.shape() == p.shape());
    double gmax = 0.0;
    for (auto v : g.span()) gmax = std::max(gmax, std::abs(v));
    CHECK(gmax > 0.0);
    CHECK(fd_rel_error(p.mutable_value(), g, f, 1e-6) < 1e-3);
  }
}
