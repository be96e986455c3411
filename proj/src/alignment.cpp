#include "tap/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "tap/errors.hpp"
#include "tap/ops.hpp"

namespace tap {

void TemporalModuleConfig::validate() const {
  if (level < 1 || level > 3) throw ConfigError("temporal module level must be 1..3");
  if (channels < 1) throw ConfigError("temporal module channels must be positive");
  if (deform_groups < 1 || channels % deform_groups != 0)
    throw ConfigError("deformable groups " + std::to_string(deform_groups) + " must divide channels " +
                      std::to_string(channels));
  if (frames < 1 || frames % 2 == 0) throw ConfigError("frame count T must be odd, got " + std::to_string(frames));
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be odd");
  if (lower_channels < 0 || (lower_channels > 0 && lower_deform_groups < 1))
    throw ConfigError("transfer from the lower level needs its channel and group counts");
}

int64_t deform_groups_for(int64_t channels, bool full_profile) {
  if (full_profile) return 8;
  return std::max<int64_t>(1, std::min<int64_t>(8, channels / 4));
}

template <typename T>
TemporalModule<T>::TemporalModule(const TemporalModuleConfig& cfg, ParamStore<T>& store, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::string p = prefix();
  const int64_t C = cfg_.channels, K = cfg_.kernel, oc = cfg_.offset_channels();
  offset_conv1_ = Conv2d<T>::create(store, p + "offset_conv1", 2 * C, C, 3, rng);
  // Zero-initialized so the first learned offsets are exactly zero.
  offset_conv2_ = Conv2d<T>::create_zero(store, p + "offset_conv2", C, oc, 3);

  // Refinement starts as the identity on the raw offsets; transferred channels start at zero.
  const int64_t refine_in = oc + (cfg_.is_bottom() ? 0 : cfg_.lower_offset_channels());
  offset_refine_ = Conv2d<T>::create_zero(store, p + "offset_refine", refine_in, oc, 3);
  {
    auto& w = offset_refine_.weight.mutable_value();
    for (int64_t o = 0; o < oc; ++o) w.at(o, o, 1, 1) = T(1);
  }

  const T dcn_bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(C * K * K)));
  dcn_weight_ = store.add(p + "dcn.weight", uniform_tensor<T>({C, C, K, K}, dcn_bound, rng));
  dcn_bias_ = store.add(p + "dcn.bias", uniform_tensor<T>({C}, dcn_bound, rng));

  const int64_t refine_feat_in = C + (cfg_.is_bottom() ? 0 : cfg_.lower_channels);
  feat_refine_ = Conv2d<T>::create(store, p + "feat_refine", refine_feat_in, C, 3, rng);
  frame_fuse_ = Conv2d<T>::create(store, p + "frame_fuse", cfg_.frames * C, C, 3, rng);
  beta_ = store.add(p + "beta", Tensor<T>({1, C, 1, 1}));
}

template <typename T>
Var<T> TemporalModule<T>::learn_offsets(const Var<T>& central, const Var<T>& neighbor) const {
  if (central.shape() != neighbor.shape())
    throw ConfigError("learn_offsets: central " + shape_str(central.shape()) + " and neighbor " +
                      shape_str(neighbor.shape()) + " differ");
  if (central.dim(1) != cfg_.channels)
    throw ConfigError("learn_offsets: expected " + std::to_string(cfg_.channels) + " channels");
  const Var<T> both[] = {central, neighbor};
  return offset_conv2_(ops::leaky_relu(offset_conv1_(ops::concat_channels<T>(both)), T(0.1)));
}

template <typename T>
Var<T> TemporalModule<T>::refine_offsets(const Var<T>& raw, const Var<T>* transferred_lower) const {
  if (raw.dim(1) != cfg_.offset_channels()) throw ConfigError("refine_offsets: raw offset channel mismatch");
  if (cfg_.is_bottom()) {
    if (transferred_lower) throw ConfigError("refine_offsets: the bottom module takes no transferred offsets");
    return offset_refine_(raw);
  }
  if (!transferred_lower) throw ConfigError("refine_offsets: level " + std::to_string(cfg_.level) +
                                            " requires offsets transferred from the level below");
  const auto& ts = transferred_lower->shape();
  if (ts[2] * 2 != raw.dim(2) || ts[3] * 2 != raw.dim(3) || ts[1] != cfg_.lower_offset_channels())
    throw ConfigError("refine_offsets: transferred offsets " + shape_str(ts) + " incompatible with " +
                      shape_str(raw.shape()));
  // Offsets are pixel displacements, so they double when the grid doubles.
  const Var<T> both[] = {raw, ops::scale(ops::upsample2x(*transferred_lower), T(2))};
  return offset_refine_(ops::concat_channels<T>(both));
}

template <typename T>
Var<T> TemporalModule<T>::clip_offsets(const Var<T>& offsets) const {
  const T bound = cfg_.offset_clip > 0 ? static_cast<T>(cfg_.offset_clip) : static_cast<T>(offsets.dim(2)) / T(2);
  return ops::clamp(offsets, -bound, bound);
}

template <typename T>
Var<T> TemporalModule<T>::align_and_refine(const Var<T>& neighbor, const Var<T>& offsets,
                                           const Var<T>* transferred_feat) const {
  const kernels::DeformGeom geom{cfg_.kernel, cfg_.kernel / 2, cfg_.deform_groups};
  Var<T> aligned = ops::deform_conv2d(neighbor, offsets, dcn_weight_, dcn_bias_, geom);
  if (cfg_.is_bottom()) {
    if (transferred_feat) throw ConfigError("align_and_refine: the bottom module takes no transferred features");
    return feat_refine_(aligned);
  }
  if (!transferred_feat) throw ConfigError("align_and_refine: level " + std::to_string(cfg_.level) +
                                           " requires features transferred from the level below");
  const Var<T> both[] = {aligned, ops::upsample2x(*transferred_feat)};
  return feat_refine_(ops::concat_channels<T>(both));
}

template <typename T>
Var<T> TemporalModule<T>::fuse_frames(std::span<const Var<T>> aligned) const {
  if (static_cast<int64_t>(aligned.size()) != cfg_.frames)
    throw ConfigError("fuse_frames: expected T = " + std::to_string(cfg_.frames) + " aligned maps, got " +
                      std::to_string(aligned.size()));
  for (const auto& a : aligned)
    if (a.shape() != aligned[0].shape()) throw ConfigError("fuse_frames: aligned maps differ in shape");
  return frame_fuse_(ops::concat_channels<T>(aligned));
}

template <typename T>
Var<T> gated_residual(const Var<T>& central, const Var<T>& fused, const Var<T>& beta) {
  if (beta.value().numel() != central.dim(1))
    throw ConfigError("gated_residual: beta length " + std::to_string(beta.value().numel()) +
                      " does not match channels " + std::to_string(central.dim(1)));
  const Var<T> b = beta.shape().size() == 4 ? beta : Var<T>(beta.value().reshaped({1, central.dim(1), 1, 1}));
  return ops::add(central, ops::mul_channels(fused, b));
}

template <typename T>
Var<T> TemporalModule<T>::gated_residual(const Var<T>& central, const Var<T>& fused) const {
  return tap::gated_residual(central, fused, beta_);
}

template <typename T>
TemporalOutput<T> TemporalModule<T>::forward(std::span<const Var<T>> frames, const AlignmentTransfer<T>* lower) const {
  const int64_t Tn = cfg_.frames;
  if (static_cast<int64_t>(frames.size()) != Tn)
    throw ConfigError("temporal module expects " + std::to_string(Tn) + " frames, got " +
                      std::to_string(frames.size()));
  if (cfg_.is_bottom() && lower) throw ConfigError("the bottom temporal module receives no transfers");
  if (!cfg_.is_bottom() && (!lower || static_cast<int64_t>(lower->offsets.size()) != Tn ||
                            static_cast<int64_t>(lower->aligned.size()) != Tn))
    throw ConfigError("temporal module at level " + std::to_string(cfg_.level) + " needs per-frame transfers");
  const Var<T>& central = frames[static_cast<size_t>(Tn / 2)];
  TemporalOutput<T> out;
  for (int64_t m = 0; m < Tn; ++m) {
    const auto mi = static_cast<size_t>(m);
    const Var<T> raw = learn_offsets(central, frames[mi]);
    const Var<T> off = clip_offsets(refine_offsets(raw, lower ? &lower->offsets[mi] : nullptr));
    out.for_upper.offsets.push_back(off);
    out.for_upper.aligned.push_back(align_and_refine(frames[mi], off, lower ? &lower->aligned[mi] : nullptr));
  }
  out.fused = fuse_frames(out.for_upper.aligned);
  out.skip = gated_residual(central, out.fused);
  return out;
}

template class TemporalModule<float>;
template class TemporalModule<double>;
template Var<float> gated_residual(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> gated_residual(const Var<double>&, const Var<double>&, const Var<double>&);

}  // namespace tap
