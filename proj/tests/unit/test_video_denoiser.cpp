#include <random>

#include "doctest.h"
#include "tap/errors.hpp"
#include "tap/ops.hpp"
#include "tap/video_denoiser.hpp"

using namespace tap;

namespace {

VideoDenoiserConfig desk_cfg(int64_t T = 5) { return VideoDenoiserConfig::for_backbone(DenoiserConfig::desk(), T); }

void open_gates(VideoDenoiser& vd, float v) {
  for (int l = 1; l <= 3; ++l) vd.module(l).beta().mutable_value().fill(v);
}

}  // namespace

TEST_CASE("window indices mirror at sequence ends") {
  CHECK(window_indices(0, 10, 5) == std::vector<int64_t>{2, 1, 0, 1, 2});
  CHECK(window_indices(9, 10, 5) == std::vector<int64_t>{7, 8, 9, 8, 7});
  CHECK(window_indices(4, 10, 5) == std::vector<int64_t>{2, 3, 4, 5, 6});
  CHECK(window_indices(0, 1, 5) == std::vector<int64_t>{0, 0, 0, 0, 0});
  CHECK(window_indices(1, 2, 5) == std::vector<int64_t>{1, 0, 1, 0, 1});
}

TEST_CASE("closed gates make the video denoiser equal the image denoiser bit for bit") {
  VideoDenoiser vd(desk_cfg(), 3);
  Rng rng(4);
  const auto window = uniform_tensor<float>({5, 3, 20, 27}, 1.f, rng);
  const auto central = batch_slice(window, 2);
  const auto ref = vd.denoise_image(central);
  CHECK(bitwise_equal(vd.denoise_window(window), ref));
  vd.set_skip_inactive_modules(false);
  CHECK(bitwise_equal(vd.denoise_window(window), ref));
}

TEST_CASE("open gates change the output and respect the frame count") {
  VideoDenoiser vd(desk_cfg(3), 5);
  open_gates(vd, 0.5f);
  Rng rng(6);
  const auto window = uniform_tensor<float>({3, 3, 16, 16}, 1.f, rng);
  const auto out = vd.denoise_window(window);
  CHECK(out.shape() == Shape{1, 3, 16, 16});
  CHECK(max_abs_diff(out, vd.denoise_image(batch_slice(window, 1))) > 0.f);
  CHECK_THROWS_AS(vd.denoise_window(uniform_tensor<float>({5, 3, 16, 16}, 1.f, rng)), ConfigError);
}

TEST_CASE("denoise_video covers every frame including N < T") {
  VideoDenoiser vd(desk_cfg(), 7);
  Rng rng(8);
  const auto one = uniform_tensor<float>({1, 3, 16, 16}, 1.f, rng);
  CHECK(vd.denoise_video(one).shape() == Shape{1, 3, 16, 16});
  const auto vid = uniform_tensor<float>({4, 3, 16, 16}, 1.f, rng);
  const auto out = vd.denoise_video(vid);
  CHECK(out.shape() == Shape{4, 3, 16, 16});
  CHECK(bitwise_equal(out, vd.denoise_image(vid)));
}

TEST_CASE("batched forward equals per-window forward") {
  VideoDenoiser vd(desk_cfg(3), 9);
  open_gates(vd, 0.3f);
  Rng rng(10);
  const auto a = uniform_tensor<float>({3, 3, 16, 16}, 1.f, rng), b = uniform_tensor<float>({3, 3, 16, 16}, 1.f, rng);
  const Tensor<float> ab[] = {a, b};
  NoGradGuard g;
  const auto both = vd.forward(Var<float>(batch_stack<float>(std::vector<Tensor<float>>{
                                   batch_slice(a, 0), batch_slice(a, 1), batch_slice(a, 2), batch_slice(b, 0),
                                   batch_slice(b, 1), batch_slice(b, 2)})),
                               2)
                        .value();
  CHECK(bitwise_equal(batch_slice(both, 0), vd.forward(Var<float>(ab[0]), 1).value()));
  CHECK(bitwise_equal(batch_slice(both, 1), vd.forward(Var<float>(ab[1]), 1).value()));
}

TEST_CASE("tiling with identity blends back to the input") {
  Rng rng(11);
  const auto x = uniform_tensor<float>({1, 3, 50, 70}, 1.f, rng);
  const auto y = tiled_apply(x, 32, 16, [](const Tensor<float>& t) { return t; });
  CHECK(max_abs_diff(x, y) < 1e-6f);
}

TEST_CASE("tiled denoising stays close to untiled denoising") {
  VideoDenoiser vd(desk_cfg(3), 12);
  Rng rng(13);
  const auto window = uniform_tensor<float>({3, 3, 48, 48}, 1.f, rng);
  const auto full = vd.denoise_window(window);
  vd.set_tile(32, 16);
  const auto tiled = vd.denoise_window(window);
  CHECK(tiled.shape() == full.shape());
  CHECK(max_abs_diff(full, tiled) < 0.5f);
  CHECK_THROWS_AS(vd.set_tile(30), ConfigError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  VideoDenoiser vd(desk_cfg(), 14);
  open_gates(vd, 0.25f);
  vd.set_step_index(2);
  vd.params().set_frozen("backbone.", true);
  const auto path = std::filesystem::temp_directory_path() / "tap_test_vd.ckpt";
  vd.save(path, {{"noise_model", "awgn:0.1"}});
  const auto back = VideoDenoiser::load(path, 5, 99);
  CHECK(back.step_index() == 2);
  for (const auto& n : vd.params().names()) {
    CAPTURE(n);
    CHECK(bitwise_equal(vd.params().get(n).value(), back.params().get(n).value()));
    CHECK(vd.params().frozen(n) == back.params().frozen(n));
  }
  CHECK(read_checkpoint(path).meta["noise_model"] == "awgn:0.1");
  std::filesystem::remove(path);
}

TEST_CASE("loading a checkpoint with different channels names the field") {
  VideoDenoiser vd(desk_cfg(), 15);
  auto other_cfg = desk_cfg();
  other_cfg.backbone.channels = {8, 8, 16, 16};
  VideoDenoiser other(other_cfg, 15);
  try {
    vd.load_weights(other.to_checkpoint());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
}

TEST_CASE("image checkpoint lifts into a video denoiser with closed gates") {
  ImageDenoiser im(DenoiserConfig::desk(), 16);
  const auto vd = VideoDenoiser::from_checkpoint(im.to_checkpoint(), 5, 17);
  CHECK(vd.all_gates_zero());
  CHECK(vd.step_index() == 0);
  for (const auto& n : im.params().names()) CHECK(bitwise_equal(im.params().get(n).value(), vd.params().get(n).value()));
  Rng rng(18);
  const auto frame = uniform_tensor<float>({3, 24, 24}, 1.f, rng);
  CHECK(bitwise_equal(im.denoise_image(frame), vd.denoise_image(frame)));
}

TEST_CASE("video config validation") {
  auto c = desk_cfg(4);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(desk_cfg().offset_clip == 0.0);
  CHECK(VideoDenoiserConfig::for_backbone(DenoiserConfig::full(), 5).offset_clip == 32.0);
  CHECK(VideoDenoiserConfig::from_json(desk_cfg().to_json()).diff(desk_cfg()).empty());
  CHECK(desk_cfg().module_config(3).is_bottom());
  CHECK(desk_cfg().module_config(1).lower_channels == 16);
}
