#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tap/nn.hpp"

namespace tap {

struct TemporalModuleConfig {
  int level = 3;                  // 1..3; level 3 is the bottom (coarsest) module
  int64_t channels = 0;           // C_l
  int64_t deform_groups = 1;      // G_l
  int64_t lower_channels = 0;     // C_{l+1}; 0 for the bottom module
  int64_t lower_deform_groups = 0;
  int64_t frames = 5;             // T (odd)
  int64_t kernel = 3;
  // Bound on |offset| in pixels of this level's map; <= 0 means half the map height.
  double offset_clip = 0.0;

  bool is_bottom() const { return lower_channels == 0; }
  int64_t offset_channels() const { return 2 * kernel * kernel * deform_groups; }
  int64_t lower_offset_channels() const { return 2 * kernel * kernel * lower_deform_groups; }
  void validate() const;
};

// Per-frame refined offsets and aligned features handed to the next finer level.
template <typename T>
struct AlignmentTransfer {
  std::vector<Var<T>> offsets;
  std::vector<Var<T>> aligned;
};

template <typename T>
struct TemporalOutput {
  Var<T> skip;      // F_central + beta * fused
  Var<T> fused;     // fusion of all aligned frames
  AlignmentTransfer<T> for_upper;
};

// Deformable alignment plugin for one skip connection. Parameters are
// registered as "tm<level>.<component>.*".
template <typename T>
class TemporalModule {
 public:
  TemporalModule(const TemporalModuleConfig& cfg, ParamStore<T>& store, Rng& rng);

  const TemporalModuleConfig& config() const { return cfg_; }
  std::string prefix() const { return "tm" + std::to_string(cfg_.level) + "."; }

  // Offsets from the channel concatenation [central, neighbor].
  Var<T> learn_offsets(const Var<T>& central, const Var<T>& neighbor) const;

  // 3x3 conv over [raw, 2 * upsample2x(transferred)], or over raw alone at the bottom.
  Var<T> refine_offsets(const Var<T>& raw, const Var<T>* transferred_lower) const;

  // Clamps offsets to the configured bound.
  Var<T> clip_offsets(const Var<T>& offsets) const;

  // conv([deform_conv(neighbor; offsets), upsample2x(transferred)]); the bottom
  // module has no transferred branch.
  Var<T> align_and_refine(const Var<T>& neighbor, const Var<T>& offsets, const Var<T>* transferred_feat) const;

  // Conv over the channel concatenation of all T aligned maps, in temporal order.
  Var<T> fuse_frames(std::span<const Var<T>> aligned) const;

  // central + beta (per channel) * fused.
  Var<T> gated_residual(const Var<T>& central, const Var<T>& fused) const;

  // frames: T maps (each B x C x H' x W') in temporal order; center is T/2.
  TemporalOutput<T> forward(std::span<const Var<T>> frames, const AlignmentTransfer<T>* lower) const;

  Var<T>& beta() { return beta_; }
  const Var<T>& beta() const { return beta_; }

  Conv2d<T>& offset_conv1() { return offset_conv1_; }
  Conv2d<T>& offset_conv2() { return offset_conv2_; }
  Conv2d<T>& offset_refine() { return offset_refine_; }
  Var<T>& dcn_weight() { return dcn_weight_; }
  Var<T>& dcn_bias() { return dcn_bias_; }
  Conv2d<T>& feat_refine() { return feat_refine_; }
  Conv2d<T>& frame_fuse() { return frame_fuse_; }

 private:
  TemporalModuleConfig cfg_;
  Conv2d<T> offset_conv1_, offset_conv2_, offset_refine_, feat_refine_, frame_fuse_;
  Var<T> dcn_weight_, dcn_bias_, beta_;
};

// Standalone op: out = central + beta * fused with per-channel broadcast.
template <typename T>
Var<T> gated_residual(const Var<T>& central, const Var<T>& fused, const Var<T>& beta);

// Deformable groups per level: 8 in the full profile, min(8, C/4) in the desk profile.
int64_t deform_groups_for(int64_t channels, bool full_profile);

}  // namespace tap
