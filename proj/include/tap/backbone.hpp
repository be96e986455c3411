#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tap/nn.hpp"

namespace tap {

enum class Profile { kFull, kDesk };
enum class BlockType { kNaf, kPlain };

std::string to_string(Profile p);
std::string to_string(BlockType b);
Profile parse_profile(const std::string& s);
BlockType parse_block_type(const std::string& s);

// 4-level encoder-decoder layout. Level 4 is the bottleneck; its block count is
// the last entry of enc_blocks. dec_blocks run from level 3 up to level 1.
struct DenoiserConfig {
  int levels = 4;
  std::vector<int64_t> enc_blocks{2, 2, 4, 6};
  std::vector<int64_t> dec_blocks{2, 2, 2};
  std::vector<int64_t> channels{64, 128, 256, 512};
  int64_t in_channels = 3;
  int64_t out_channels = 3;
  Profile profile = Profile::kFull;
  BlockType block = BlockType::kNaf;

  static DenoiserConfig full(int64_t in_channels = 3);
  // Small CPU-trainable network with the same topology.
  static DenoiserConfig desk(int64_t in_channels = 3);

  void validate() const;
  // Names of fields that differ; empty when compatible.
  std::vector<std::string> diff(const DenoiserConfig& other) const;

  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);

  // Sampling layers are fixed for this build and recorded in checkpoints.
  static constexpr const char* kDownsample = "strided_conv2x2";
  static constexpr const char* kUpsample = "conv1x1_pixel_shuffle";
};

// Per-frame encoder features for levels 1..3 plus the level-4 input.
template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, 3> skips;  // index 0 is level 1
  Var<T> bottleneck_input;
};

template <typename T>
struct NafBlock {
  Var<T> norm1_w, norm1_b, norm2_w, norm2_b, beta, gamma;
  Conv2d<T> conv1, conv2, conv3, sca, conv4, conv5;
  int64_t channels = 0;

  static NafBlock create(ParamStore<T>& store, const std::string& name, int64_t c, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
};

template <typename T>
struct PlainBlock {
  Conv2d<T> conv1, conv2;

  static PlainBlock create(ParamStore<T>& store, const std::string& name, int64_t c, Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
};

template <typename T>
using ResBlock = std::variant<NafBlock<T>, PlainBlock<T>>;

// Image denoiser body. Parameters live in the caller's ParamStore under the
// "backbone." prefix so a video denoiser can host the same tensors.
template <typename T>
class Backbone {
 public:
  static constexpr const char* kPrefix = "backbone.";

  Backbone(const DenoiserConfig& cfg, ParamStore<T>& store, Rng& rng);

  const DenoiserConfig& config() const { return cfg_; }

  // frames: N x in_channels x H x W with H, W divisible by 8.
  FeaturePyramid<T> encode(const Var<T>& frames) const;

  // Runs the level-4 blocks and the decoder. skips[l-1] is added to the
  // upsampled decoder input of level l. Output = residual_base + prediction.
  Var<T> decode(const Var<T>& bottleneck_input, const std::array<Var<T>, 3>& skips,
                const Var<T>& residual_base) const;

  // decode(encode(x)) with direct skips; no clamping (training path).
  Var<T> forward(const Var<T>& frames) const;

  // Inference: reflect-pad to a multiple of 8, run, crop and clamp to [0, 1].
  Tensor<T> denoise_image(const Tensor<T>& frames) const;

 private:
  Var<T> run_blocks(const std::vector<ResBlock<T>>& blocks, Var<T> x) const;

  DenoiserConfig cfg_;
  Conv2d<T> intro_, ending_;
  std::array<std::vector<ResBlock<T>>, 3> enc_;
  std::array<Conv2d<T>, 3> down_;
  std::vector<ResBlock<T>> middle_;
  std::array<Conv2d<T>, 3> up_;  // index l-1 maps level l+1 to level l
  std::array<std::vector<ResBlock<T>>, 3> dec_;
};

// Spatial padding needed to reach a multiple of 8.
int64_t pad_to_multiple(int64_t n, int64_t m = 8);

template <typename T>
void check_finite(const Var<T>& x, const std::string& where);

// Inference frames may be given as C x H x W or N x C x H x W.
template <typename T>
Tensor<T> as_batch(const Tensor<T>& x);

template <typename T>
Tensor<T> clamp01(Tensor<T> x);

}  // namespace tap
