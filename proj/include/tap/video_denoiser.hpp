#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "tap/alignment.hpp"
#include "tap/backbone.hpp"
#include "tap/checkpoint.hpp"

namespace tap {

using Real = float;

struct VideoDenoiserConfig {
  DenoiserConfig backbone = DenoiserConfig::full();
  int64_t frames = 5;        // T
  double offset_clip = 32;   // pixels; <= 0 means half of each level's map height

  // Profile defaults: full uses a 32 px clip, desk clips at half the map height.
  static VideoDenoiserConfig for_backbone(const DenoiserConfig& backbone, int64_t frames);

  void validate() const;
  std::vector<std::string> diff(const VideoDenoiserConfig& other) const;
  nlohmann::json to_json() const;
  static VideoDenoiserConfig from_json(const nlohmann::json& j);

  TemporalModuleConfig module_config(int level) const;
};

// Frame indices of the window centred at t, mirrored at the sequence ends.
std::vector<int64_t> window_indices(int64_t t, int64_t n_frames, int64_t window);

// Image denoiser (step 0): the backbone alone with its own parameter store.
class ImageDenoiser {
 public:
  ImageDenoiser(const DenoiserConfig& cfg, uint64_t seed);

  const DenoiserConfig& config() const { return backbone_->config(); }
  ParamStore<Real>& params() { return params_; }
  const ParamStore<Real>& params() const { return params_; }
  const Backbone<Real>& backbone() const { return *backbone_; }

  Tensor<Real> denoise_image(const Tensor<Real>& frames) const { return backbone_->denoise_image(frames); }

  CheckpointFile to_checkpoint(const nlohmann::json& extra_meta = {}) const;
  void save(const std::filesystem::path& path, const nlohmann::json& extra_meta = {}) const;
  static ImageDenoiser load(const std::filesystem::path& path);
  static ImageDenoiser from_checkpoint(const CheckpointFile& ck);

 private:
  ParamStore<Real> params_;
  std::unique_ptr<Backbone<Real>> backbone_;
};

// The lifted video denoiser: backbone plus temporal modules on the skips of
// levels 3, 2 and 1. step_index counts completed fine-tuning steps.
class VideoDenoiser {
 public:
  VideoDenoiser(const VideoDenoiserConfig& cfg, uint64_t seed);
  VideoDenoiser(VideoDenoiser&&) = default;
  VideoDenoiser& operator=(VideoDenoiser&&) = default;

  const VideoDenoiserConfig& config() const { return cfg_; }
  int64_t frames() const { return cfg_.frames; }
  ParamStore<Real>& params() { return params_; }
  const ParamStore<Real>& params() const { return params_; }
  const Backbone<Real>& backbone() const { return *backbone_; }
  TemporalModule<Real>& module(int level);
  const TemporalModule<Real>& module(int level) const;

  int step_index() const { return step_index_; }
  void set_step_index(int s) { step_index_ = s; }

  // When on (default), modules whose gate is all zero and that cannot train are
  // skipped, since they contribute nothing. Turning it off evaluates them anyway.
  void set_skip_inactive_modules(bool on) { skip_inactive_ = on; }

  // frames: (B*T) x C x H x W, window-major; returns B restored central frames
  // (unclamped). H and W must be divisible by 8.
  Var<Real> forward(const Var<Real>& frames, int64_t batch) const;

  // window: T x C x H x W. Returns the restored central frame 1 x C x H x W.
  Tensor<Real> denoise_window(const Tensor<Real>& window) const;

  // video: N x C x H x W; slides a window over every frame.
  Tensor<Real> denoise_video(const Tensor<Real>& video) const;

  // Frame-by-frame backbone only (tiled like denoise_window when tiling is on).
  Tensor<Real> denoise_image(const Tensor<Real>& frames) const;

  // Spatial tiling for large inputs; 0 disables. Tile must be a multiple of 8.
  void set_tile(int64_t tile, int64_t overlap = 16);

  bool all_gates_zero() const;

  CheckpointFile to_checkpoint(const nlohmann::json& extra_meta = {}) const;
  void save(const std::filesystem::path& path, const nlohmann::json& extra_meta = {}) const;

  // Restores a video checkpoint, or copies the backbone of an image checkpoint
  // into a video denoiser with fresh temporal modules (gates at zero).
  static VideoDenoiser from_checkpoint(const CheckpointFile& ck, int64_t frames, uint64_t seed);
  static VideoDenoiser load(const std::filesystem::path& path, int64_t frames, uint64_t seed);
  // Loads tensors into this instance after checking configuration compatibility.
  void load_weights(const CheckpointFile& ck);

 private:
  bool module_active(int level) const;
  Tensor<Real> run_window_tile(const Tensor<Real>& window) const;

  VideoDenoiserConfig cfg_;
  ParamStore<Real> params_;
  std::unique_ptr<Backbone<Real>> backbone_;
  std::array<std::unique_ptr<TemporalModule<Real>>, 3> modules_;  // index l-1
  int step_index_ = 0;
  bool skip_inactive_ = true;
  int64_t tile_ = 0;
  int64_t tile_overlap_ = 16;
};

// Linear-blend spatial tiling of fn over x (N x C x H x W).
Tensor<Real> tiled_apply(const Tensor<Real>& x, int64_t tile, int64_t overlap,
                         const std::function<Tensor<Real>(const Tensor<Real>&)>& fn);

// Frozen-flag map as stored in checkpoint metadata.
nlohmann::json frozen_flags(const ParamStore<Real>& params);

}  // namespace tap
