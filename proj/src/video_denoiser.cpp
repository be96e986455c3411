#include "tap/video_denoiser.hpp"

#include <algorithm>

#include "tap/errors.hpp"
#include "tap/ops.hpp"

namespace tap {

VideoDenoiserConfig VideoDenoiserConfig::for_backbone(const DenoiserConfig& backbone, int64_t frames) {
  VideoDenoiserConfig c;
  c.backbone = backbone;
  c.frames = frames;
  c.offset_clip = backbone.profile == Profile::kFull ? 32.0 : 0.0;
  return c;
}

void VideoDenoiserConfig::validate() const {
  backbone.validate();
  if (frames < 1 || frames % 2 == 0) throw ConfigError("frames (T) must be odd, got " + std::to_string(frames));
  for (int l = 1; l <= 3; ++l) module_config(l).validate();
}

std::vector<std::string> VideoDenoiserConfig::diff(const VideoDenoiserConfig& o) const {
  auto d = backbone.diff(o.backbone);
  if (frames != o.frames) d.push_back("frames");
  if (offset_clip != o.offset_clip) d.push_back("offset_clip");
  return d;
}

nlohmann::json VideoDenoiserConfig::to_json() const {
  return {{"backbone", backbone.to_json()}, {"frames", frames}, {"offset_clip", offset_clip}};
}

VideoDenoiserConfig VideoDenoiserConfig::from_json(const nlohmann::json& j) {
  VideoDenoiserConfig c;
  try {
    c.backbone = DenoiserConfig::from_json(j.at("backbone"));
    c.frames = j.at("frames").get<int64_t>();
    c.offset_clip = j.at("offset_clip").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed video denoiser config: ") + e.what());
  }
  c.validate();
  return c;
}

TemporalModuleConfig VideoDenoiserConfig::module_config(int level) const {
  const bool full = backbone.profile == Profile::kFull;
  TemporalModuleConfig m;
  m.level = level;
  m.channels = backbone.channels.at(static_cast<size_t>(level - 1));
  m.deform_groups = deform_groups_for(m.channels, full);
  if (level < 3) {
    m.lower_channels = backbone.channels.at(static_cast<size_t>(level));
    m.lower_deform_groups = deform_groups_for(m.lower_channels, full);
  }
  m.frames = frames;
  m.offset_clip = offset_clip;
  return m;
}

std::vector<int64_t> window_indices(int64_t t, int64_t n_frames, int64_t window) {
  if (n_frames < 1) throw ConfigError("window_indices: empty sequence");
  std::vector<int64_t> idx;
  for (int64_t k = -window / 2; k <= window / 2; ++k) idx.push_back(reflect_index(t + k, n_frames));
  return idx;
}

nlohmann::json frozen_flags(const ParamStore<Real>& params) {
  nlohmann::json f = nlohmann::json::object();
  for (const auto& n : params.names()) f[n] = params.frozen(n);
  return f;
}

namespace {

void apply_frozen_flags(ParamStore<Real>& params, const nlohmann::json& meta) {
  if (!meta.contains("frozen_flags")) return;
  for (const auto& [name, flag] : meta["frozen_flags"].items())
    if (params.contains(name)) params.set_frozen(name, flag.get<bool>());
}

void copy_tensors(ParamStore<Real>& params, const CheckpointFile& ck, const std::string& prefix, bool require_all) {
  for (const auto& name : params.names()) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    const Tensor<Real>* t = ck.find(name);
    if (!t) {
      if (require_all) throw ConfigError("checkpoint is missing tensor '" + name + "'");
      continue;
    }
    auto& v = params.get(name);
    if (v.shape() != t->shape())
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(t->shape()) + ", expected " +
                        shape_str(v.shape()));
    v.mutable_value() = *t;
  }
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

}  // namespace

ImageDenoiser::ImageDenoiser(const DenoiserConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  backbone_ = std::make_unique<Backbone<Real>>(cfg, params_, rng);
}

CheckpointFile ImageDenoiser::to_checkpoint(const nlohmann::json& extra_meta) const {
  CheckpointFile ck;
  ck.meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  ck.meta["format"] = "tap";
  ck.meta["kind"] = "image";
  ck.meta["config"] = config().to_json();
  if (!ck.meta.contains("step_index")) ck.meta["step_index"] = 0;
  ck.meta["frozen_flags"] = frozen_flags(params_);
  for (const auto& n : params_.names()) ck.tensors.emplace_back(n, params_.get(n).value());
  return ck;
}

void ImageDenoiser::save(const std::filesystem::path& path, const nlohmann::json& extra_meta) const {
  write_checkpoint(path, to_checkpoint(extra_meta));
}

ImageDenoiser ImageDenoiser::from_checkpoint(const CheckpointFile& ck) {
  if (ck.meta.value("kind", "") != "image")
    throw ConfigError("expected an image-denoiser checkpoint, found kind '" + ck.meta.value("kind", "") + "'");
  ImageDenoiser d(DenoiserConfig::from_json(ck.meta.at("config")), 0);
  copy_tensors(d.params_, ck, "", true);
  apply_frozen_flags(d.params_, ck.meta);
  return d;
}

ImageDenoiser ImageDenoiser::load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

VideoDenoiser::VideoDenoiser(const VideoDenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  backbone_ = std::make_unique<Backbone<Real>>(cfg_.backbone, params_, rng);
  for (int level = 3; level >= 1; --level)
    modules_[static_cast<size_t>(level - 1)] =
        std::make_unique<TemporalModule<Real>>(cfg_.module_config(level), params_, rng);
}

TemporalModule<Real>& VideoDenoiser::module(int level) {
  if (level < 1 || level > 3) throw ConfigError("temporal module level must be 1..3");
  return *modules_[static_cast<size_t>(level - 1)];
}

const TemporalModule<Real>& VideoDenoiser::module(int level) const {
  if (level < 1 || level > 3) throw ConfigError("temporal module level must be 1..3");
  return *modules_[static_cast<size_t>(level - 1)];
}

bool VideoDenoiser::module_active(int level) const {
  if (!skip_inactive_) return true;
  const auto& m = module(level);
  for (auto b : m.beta().value().span())
    if (b != Real(0)) return true;
  if (GradMode::enabled() && params_.parameter_count(m.prefix(), true) > 0) return true;
  return false;
}

bool VideoDenoiser::all_gates_zero() const {
  for (int l = 1; l <= 3; ++l)
    for (auto b : module(l).beta().value().span())
      if (b != Real(0)) return false;
  return true;
}

Var<Real> VideoDenoiser::forward(const Var<Real>& frames, int64_t batch) const {
  const int64_t Tn = cfg_.frames;
  if (frames.shape().size() != 4 || frames.dim(0) != batch * Tn)
    throw ConfigError("video denoiser expects " + std::to_string(batch) + " windows of T = " + std::to_string(Tn) +
                      " frames, got input " + shape_str(frames.shape()));
  const FeaturePyramid<Real> pyr = backbone_->encode(frames);

  std::vector<int64_t> centers;
  for (int64_t b = 0; b < batch; ++b) centers.push_back(b * Tn + Tn / 2);

  // Modules run coarse to fine; a finer module needs every coarser one for its transfers.
  int finest_active = 4;
  for (int l = 1; l <= 3; ++l)
    if (module_active(l)) {
      finest_active = l;
      break;
    }

  std::array<Var<Real>, 3> skips;
  AlignmentTransfer<Real> transfer;
  bool have_transfer = false;
  for (int l = 3; l >= 1; --l) {
    const Var<Real>& feats = pyr.skips[static_cast<size_t>(l - 1)];
    if (l < finest_active) {
      skips[static_cast<size_t>(l - 1)] = ops::gather_batch<Real>(feats, centers);
      continue;
    }
    std::vector<Var<Real>> per_frame;
    for (int64_t m = 0; m < Tn; ++m) {
      std::vector<int64_t> idx;
      for (int64_t b = 0; b < batch; ++b) idx.push_back(b * Tn + m);
      per_frame.push_back(ops::gather_batch<Real>(feats, idx));
    }
    auto out = module(l).forward(per_frame, have_transfer ? &transfer : nullptr);
    skips[static_cast<size_t>(l - 1)] = out.skip;
    transfer = std::move(out.for_upper);
    have_transfer = true;
  }
  // Only the central frame enters the level-4 blocks.
  const Var<Real> bottleneck = ops::gather_batch<Real>(pyr.bottleneck_input, centers);
  const Var<Real> base = ops::gather_batch<Real>(frames, centers);
  return backbone_->decode(bottleneck, skips, base);
}

Tensor<Real> VideoDenoiser::run_window_tile(const Tensor<Real>& window) const {
  NoGradGuard guard;
  const int64_t H = window.dim(2), W = window.dim(3);
  Var<Real> in(reflect_pad(window, pad_to_multiple(H), pad_to_multiple(W)));
  return clamp01(crop(forward(in, 1).value(), 0, 0, H, W));
}

Tensor<Real> VideoDenoiser::denoise_window(const Tensor<Real>& window) const {
  if (window.ndim() != 4 || window.dim(0) != cfg_.frames)
    throw ConfigError("denoise_window expects T = " + std::to_string(cfg_.frames) + " frames, got " +
                      shape_str(window.shape()));
  if (tile_ > 0) return tiled_apply(window, tile_, tile_overlap_, [this](const Tensor<Real>& w) {
      return run_window_tile(w);
    });
  return run_window_tile(window);
}

Tensor<Real> VideoDenoiser::denoise_image(const Tensor<Real>& frames) const {
  if (tile_ > 0) {
    const Tensor<Real> x = as_batch(frames);
    std::vector<Tensor<Real>> outs;
    for (int64_t n = 0; n < x.dim(0); ++n)
      outs.push_back(tiled_apply(batch_slice(x, n), tile_, tile_overlap_,
                                 [this](const Tensor<Real>& f) { return backbone_->denoise_image(f); }));
    Tensor<Real> out = batch_stack<Real>(outs);
    return frames.ndim() == 3 ? out.reshaped(frames.shape()) : out;
  }
  return backbone_->denoise_image(frames);
}

Tensor<Real> VideoDenoiser::denoise_video(const Tensor<Real>& video) const {
  if (video.ndim() != 4 || video.dim(0) < 1) throw ConfigError("denoise_video expects N x C x H x W with N >= 1");
  const int64_t N = video.dim(0);
  std::vector<Tensor<Real>> frames_in;
  for (int64_t n = 0; n < N; ++n) frames_in.push_back(batch_slice(video, n));
  std::vector<Tensor<Real>> out;
  out.reserve(static_cast<size_t>(N));
  for (int64_t t = 0; t < N; ++t) {
    std::vector<Tensor<Real>> win;
    for (auto i : window_indices(t, N, cfg_.frames)) win.push_back(frames_in[static_cast<size_t>(i)]);
    out.push_back(denoise_window(batch_stack<Real>(win)));
  }
  return batch_stack<Real>(out);
}

void VideoDenoiser::set_tile(int64_t tile, int64_t overlap) {
  if (tile < 0 || tile % 8 != 0) throw ConfigError("tile size must be a non-negative multiple of 8");
  if (tile > 0 && (overlap < 0 || overlap >= tile)) throw ConfigError("tile overlap must be in [0, tile)");
  tile_ = tile;
  tile_overlap_ = overlap;
}

Tensor<Real> tiled_apply(const Tensor<Real>& x, int64_t tile, int64_t overlap,
                         const std::function<Tensor<Real>(const Tensor<Real>&)>& fn) {
  const int64_t H = x.dim(2), W = x.dim(3);
  if (H <= tile && W <= tile) return fn(x);
  auto starts = [&](int64_t n) {
    std::vector<int64_t> s;
    if (n <= tile) return std::vector<int64_t>{0};
    for (int64_t p = 0;; p += tile - overlap) {
      if (p + tile >= n) {
        s.push_back(n - tile);
        break;
      }
      s.push_back(p);
    }
    return s;
  };
  // Weight ramps linearly across the overlap on edges shared with another tile.
  auto ramp = [&](int64_t i, int64_t len, bool ramp_lo, bool ramp_hi) {
    double w = 1.0;
    if (ramp_lo) w = std::min(w, static_cast<double>(i + 1) / static_cast<double>(overlap + 1));
    if (ramp_hi) w = std::min(w, static_cast<double>(len - i) / static_cast<double>(overlap + 1));
    return w;
  };
  const auto ys = starts(H), xs = starts(W);
  Tensor<double> acc;
  Tensor<double> wsum({H, W});
  for (size_t yi = 0; yi < ys.size(); ++yi)
    for (size_t xi = 0; xi < xs.size(); ++xi) {
      const int64_t th = std::min(tile, H), tw = std::min(tile, W);
      const Tensor<Real> out = fn(crop(x, ys[yi], xs[xi], th, tw));
      if (acc.empty()) acc = Tensor<double>({out.dim(0), out.dim(1), H, W});
      for (int64_t n = 0; n < out.dim(0); ++n)
        for (int64_t c = 0; c < out.dim(1); ++c)
          for (int64_t h = 0; h < th; ++h) {
            const double wy = ramp(h, th, yi > 0, yi + 1 < ys.size());
            for (int64_t w = 0; w < tw; ++w) {
              const double wt = wy * ramp(w, tw, xi > 0, xi + 1 < xs.size());
              acc.at(n, c, ys[yi] + h, xs[xi] + w) += wt * out.at(n, c, h, w);
              if (n == 0 && c == 0) wsum[(ys[yi] + h) * W + xs[xi] + w] += wt;
            }
          }
    }
  Tensor<Real> out(acc.shape());
  for (int64_t n = 0; n < acc.dim(0); ++n)
    for (int64_t c = 0; c < acc.dim(1); ++c)
      for (int64_t p = 0; p < H * W; ++p)
        out[(n * acc.dim(1) + c) * H * W + p] = static_cast<Real>(acc[(n * acc.dim(1) + c) * H * W + p] / wsum[p]);
  return out;
}

CheckpointFile VideoDenoiser::to_checkpoint(const nlohmann::json& extra_meta) const {
  CheckpointFile ck;
  ck.meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  ck.meta["format"] = "tap";
  ck.meta["kind"] = "video";
  ck.meta["config"] = cfg_.to_json();
  ck.meta["step_index"] = step_index_;
  ck.meta["frozen_flags"] = frozen_flags(params_);
  for (const auto& n : params_.names()) ck.tensors.emplace_back(n, params_.get(n).value());
  return ck;
}

void VideoDenoiser::save(const std::filesystem::path& path, const nlohmann::json& extra_meta) const {
  write_checkpoint(path, to_checkpoint(extra_meta));
}

void VideoDenoiser::load_weights(const CheckpointFile& ck) {
  const std::string kind = ck.meta.value("kind", "");
  if (kind == "image") {
    const auto other = DenoiserConfig::from_json(ck.meta.at("config"));
    const auto d = cfg_.backbone.diff(other);
    if (!d.empty()) throw ConfigError("incompatible checkpoint: differing fields: " + join(d));
    copy_tensors(params_, ck, Backbone<Real>::kPrefix, true);
    step_index_ = 0;
    return;
  }
  if (kind != "video") throw ConfigError("unknown checkpoint kind '" + kind + "'");
  const auto other = VideoDenoiserConfig::from_json(ck.meta.at("config"));
  const auto d = cfg_.diff(other);
  if (!d.empty()) throw ConfigError("incompatible checkpoint: differing fields: " + join(d));
  copy_tensors(params_, ck, "", true);
  apply_frozen_flags(params_, ck.meta);
  step_index_ = ck.meta.value("step_index", 0);
}

VideoDenoiser VideoDenoiser::from_checkpoint(const CheckpointFile& ck, int64_t frames, uint64_t seed) {
  const std::string kind = ck.meta.value("kind", "");
  VideoDenoiserConfig cfg;
  if (kind == "image") {
    cfg = VideoDenoiserConfig::for_backbone(DenoiserConfig::from_json(ck.meta.at("config")), frames);
  } else if (kind == "video") {
    cfg = VideoDenoiserConfig::from_json(ck.meta.at("config"));
    if (frames > 0 && cfg.frames != frames)
      throw ConfigError("incompatible checkpoint: differing fields: frames");
  } else {
    throw ConfigError("unknown checkpoint kind '" + kind + "'");
  }
  VideoDenoiser vd(cfg, seed);
  vd.load_weights(ck);
  return vd;
}

VideoDenoiser VideoDenoiser::load(const std::filesystem::path& path, int64_t frames, uint64_t seed) {
  return from_checkpoint(read_checkpoint(path), frames, seed);
}

}  // namespace tap
