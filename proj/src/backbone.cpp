#include "tap/backbone.hpp"

#include <algorithm>

#include "tap/errors.hpp"
#include "tap/ops.hpp"

namespace tap {

std::string to_string(Profile p) { return p == Profile::kFull ? "full" : "desk"; }
std::string to_string(BlockType b) { return b == BlockType::kNaf ? "naf" : "plain"; }

Profile parse_profile(const std::string& s) {
  if (s == "full") return Profile::kFull;
  if (s == "desk") return Profile::kDesk;
  throw ConfigError("unknown profile '" + s + "' (expected full or desk)");
}

BlockType parse_block_type(const std::string& s) {
  if (s == "naf") return BlockType::kNaf;
  if (s == "plain") return BlockType::kPlain;
  throw ConfigError("unknown block type '" + s + "' (expected naf or plain)");
}

DenoiserConfig DenoiserConfig::full(int64_t in_channels) {
  DenoiserConfig c;
  c.in_channels = c.out_channels = in_channels;
  return c;
}

DenoiserConfig DenoiserConfig::desk(int64_t in_channels) {
  DenoiserConfig c;
  c.enc_blocks = {1, 1, 1, 1};
  c.dec_blocks = {1, 1, 1};
  c.channels = {8, 16, 32, 64};
  c.in_channels = c.out_channels = in_channels;
  c.profile = Profile::kDesk;
  c.block = BlockType::kNaf;
  return c;
}

void DenoiserConfig::validate() const {
  if (levels != 4) throw ConfigError("levels must be 4, got " + std::to_string(levels));
  if (enc_blocks.size() != 4) throw ConfigError("enc_blocks must have 4 entries");
  if (dec_blocks.size() != 3) throw ConfigError("dec_blocks must have 3 entries");
  if (channels.size() != 4) throw ConfigError("channels must have 4 entries");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("in_channels/out_channels must be positive");
  if (in_channels != out_channels)
    throw ConfigError("global residual requires in_channels == out_channels");
  if (profile == Profile::kFull) {
    if (enc_blocks != std::vector<int64_t>{2, 2, 4, 6}) throw ConfigError("full profile requires enc_blocks [2,2,4,6]");
    if (dec_blocks != std::vector<int64_t>{2, 2, 2}) throw ConfigError("full profile requires dec_blocks [2,2,2]");
    if (channels != std::vector<int64_t>{64, 128, 256, 512})
      throw ConfigError("full profile requires channels [64,128,256,512]");
  } else {
    for (auto c : channels)
      if (c < 4) throw ConfigError("desk profile channel widths must be >= 4");
    for (auto b : enc_blocks)
      if (b < 1) throw ConfigError("desk profile block counts must be >= 1");
    for (auto b : dec_blocks)
      if (b < 1) throw ConfigError("desk profile block counts must be >= 1");
  }
}

std::vector<std::string> DenoiserConfig::diff(const DenoiserConfig& o) const {
  std::vector<std::string> d;
  if (levels != o.levels) d.push_back("levels");
  if (enc_blocks != o.enc_blocks) d.push_back("enc_blocks");
  if (dec_blocks != o.dec_blocks) d.push_back("dec_blocks");
  if (channels != o.channels) d.push_back("channels");
  if (in_channels != o.in_channels) d.push_back("in_channels");
  if (out_channels != o.out_channels) d.push_back("out_channels");
  if (profile != o.profile) d.push_back("profile");
  if (block != o.block) d.push_back("block");
  return d;
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"levels", levels},
          {"enc_blocks", enc_blocks},
          {"dec_blocks", dec_blocks},
          {"channels", channels},
          {"in_channels", in_channels},
          {"out_channels", out_channels},
          {"profile", to_string(profile)},
          {"block", to_string(block)},
          {"downsample", kDownsample},
          {"upsample", kUpsample}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  try {
    c.levels = j.at("levels").get<int>();
    c.enc_blocks = j.at("enc_blocks").get<std::vector<int64_t>>();
    c.dec_blocks = j.at("dec_blocks").get<std::vector<int64_t>>();
    c.channels = j.at("channels").get<std::vector<int64_t>>();
    c.in_channels = j.at("in_channels").get<int64_t>();
    c.out_channels = j.at("out_channels").get<int64_t>();
    c.profile = parse_profile(j.at("profile").get<std::string>());
    c.block = parse_block_type(j.value("block", std::string("naf")));
    if (j.contains("downsample") && j["downsample"] != kDownsample)
      throw ConfigError("checkpoint uses unsupported downsampling '" + j["downsample"].get<std::string>() + "'");
    if (j.contains("upsample") && j["upsample"] != kUpsample)
      throw ConfigError("checkpoint uses unsupported upsampling '" + j["upsample"].get<std::string>() + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed denoiser config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
NafBlock<T> NafBlock<T>::create(ParamStore<T>& store, const std::string& name, int64_t c, Rng& rng) {
  NafBlock b;
  b.channels = c;
  b.norm1_w = store.add(name + ".norm1.weight", Tensor<T>({c}, T(1)));
  b.norm1_b = store.add(name + ".norm1.bias", Tensor<T>({c}));
  b.conv1 = Conv2d<T>::create(store, name + ".conv1", c, 2 * c, 1, rng);
  b.conv2 = Conv2d<T>::create(store, name + ".conv2", 2 * c, 2 * c, 3, rng, 1, 2 * c);
  b.sca = Conv2d<T>::create(store, name + ".sca", c, c, 1, rng);
  b.conv3 = Conv2d<T>::create(store, name + ".conv3", c, c, 1, rng);
  b.norm2_w = store.add(name + ".norm2.weight", Tensor<T>({c}, T(1)));
  b.norm2_b = store.add(name + ".norm2.bias", Tensor<T>({c}));
  b.conv4 = Conv2d<T>::create(store, name + ".conv4", c, 2 * c, 1, rng);
  b.conv5 = Conv2d<T>::create(store, name + ".conv5", c, c, 1, rng);
  b.beta = store.add(name + ".beta", Tensor<T>({1, c, 1, 1}));
  b.gamma = store.add(name + ".gamma", Tensor<T>({1, c, 1, 1}));
  return b;
}

namespace {

template <typename T>
Var<T> simple_gate(const Var<T>& x) {
  const int64_t half = x.dim(1) / 2;
  return ops::mul(ops::slice_channels(x, 0, half), ops::slice_channels(x, half, half));
}

}  // namespace

template <typename T>
Var<T> NafBlock<T>::operator()(const Var<T>& inp) const {
  const T eps = T(1e-6);
  Var<T> x = ops::layer_norm_channels(inp, norm1_w, norm1_b, eps);
  x = conv2(conv1(x));
  x = simple_gate(x);
  x = ops::mul_channels(x, sca(ops::global_avg_pool(x)));
  x = conv3(x);
  Var<T> y = ops::add(inp, ops::mul_channels(x, beta));
  x = ops::layer_norm_channels(y, norm2_w, norm2_b, eps);
  x = conv5(simple_gate(conv4(x)));
  return ops::add(y, ops::mul_channels(x, gamma));
}

template <typename T>
PlainBlock<T> PlainBlock<T>::create(ParamStore<T>& store, const std::string& name, int64_t c, Rng& rng) {
  PlainBlock b;
  b.conv1 = Conv2d<T>::create(store, name + ".conv1", c, c, 3, rng);
  b.conv2 = Conv2d<T>::create(store, name + ".conv2", c, c, 3, rng);
  return b;
}

template <typename T>
Var<T> PlainBlock<T>::operator()(const Var<T>& x) const {
  return ops::add(x, conv2(ops::leaky_relu(conv1(x), T(0.2))));
}

namespace {

template <typename T>
std::vector<ResBlock<T>> make_blocks(const DenoiserConfig& cfg, ParamStore<T>& store, const std::string& name,
                                     int64_t count, int64_t c, Rng& rng) {
  std::vector<ResBlock<T>> blocks;
  for (int64_t i = 0; i < count; ++i) {
    const std::string bn = name + "." + std::to_string(i);
    if (cfg.block == BlockType::kNaf)
      blocks.emplace_back(NafBlock<T>::create(store, bn, c, rng));
    else
      blocks.emplace_back(PlainBlock<T>::create(store, bn, c, rng));
  }
  return blocks;
}

}  // namespace

template <typename T>
Backbone<T>::Backbone(const DenoiserConfig& cfg, ParamStore<T>& store, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::string p = kPrefix;
  const auto& ch = cfg_.channels;
  intro_ = Conv2d<T>::create(store, p + "intro", cfg_.in_channels, ch[0], 3, rng);
  for (int l = 0; l < 3; ++l) {
    enc_[l] = make_blocks(cfg_, store, p + "enc" + std::to_string(l + 1), cfg_.enc_blocks[l], ch[l], rng);
    down_[l] = Conv2d<T>::create(store, p + "down" + std::to_string(l + 1), ch[l], ch[l + 1], 2, rng, 2);
  }
  middle_ = make_blocks(cfg_, store, p + "middle", cfg_.enc_blocks[3], ch[3], rng);
  for (int l = 2; l >= 0; --l) {
    up_[l] = Conv2d<T>::create(store, p + "up" + std::to_string(l + 1), ch[l + 1], 4 * ch[l], 1, rng, 1, 1, false);
    dec_[l] = make_blocks(cfg_, store, p + "dec" + std::to_string(l + 1), cfg_.dec_blocks[2 - l], ch[l], rng);
  }
  ending_ = Conv2d<T>::create(store, p + "ending", ch[0], cfg_.out_channels, 3, rng);
}

template <typename T>
Var<T> Backbone<T>::run_blocks(const std::vector<ResBlock<T>>& blocks, Var<T> x) const {
  for (const auto& b : blocks) x = std::visit([&](const auto& blk) { return blk(x); }, b);
  return x;
}

template <typename T>
FeaturePyramid<T> Backbone<T>::encode(const Var<T>& frames) const {
  const auto& s = frames.shape();
  if (s.size() != 4) throw ConfigError("encode expects N x C x H x W frames, got " + shape_str(s));
  if (s[1] != cfg_.in_channels)
    throw ConfigError("encode: frame has " + std::to_string(s[1]) + " channels but config in_channels is " +
                      std::to_string(cfg_.in_channels));
  if (s[2] % 8 != 0 || s[3] % 8 != 0)
    throw ConfigError("encode: spatial dims " + shape_str(s) + " must be divisible by 8 (pad first)");
  FeaturePyramid<T> pyr;
  Var<T> x = intro_(frames);
  for (int l = 0; l < 3; ++l) {
    x = run_blocks(enc_[l], x);
    pyr.skips[l] = x;
    x = down_[l](x);
  }
  pyr.bottleneck_input = x;
  return pyr;
}

template <typename T>
void check_finite(const Var<T>& x, const std::string& where) {
  if (!x.value().all_finite()) throw NumericError("non-finite activations at " + where);
}

template <typename T>
Var<T> Backbone<T>::decode(const Var<T>& bottleneck_input, const std::array<Var<T>, 3>& skips,
                           const Var<T>& residual_base) const {
  Var<T> x = run_blocks(middle_, bottleneck_input);
  check_finite(x, "decoder level 4");
  for (int l = 2; l >= 0; --l) {
    x = ops::pixel_shuffle(up_[l](x), 2);
    if (x.shape() != skips[l].shape())
      throw ConfigError("decode: level " + std::to_string(l + 1) + " input " + shape_str(skips[l].shape()) +
                        " does not match decoder shape " + shape_str(x.shape()));
    x = run_blocks(dec_[l], ops::add(x, skips[l]));
    check_finite(x, "decoder level " + std::to_string(l + 1));
  }
  x = ending_(x);
  if (x.shape() != residual_base.shape())
    throw ConfigError("decode: residual base shape " + shape_str(residual_base.shape()) + " vs output " +
                      shape_str(x.shape()));
  return ops::add(residual_base, x);
}

template <typename T>
Var<T> Backbone<T>::forward(const Var<T>& frames) const {
  auto pyr = encode(frames);
  return decode(pyr.bottleneck_input, pyr.skips, frames);
}

int64_t pad_to_multiple(int64_t n, int64_t m) { return (m - n % m) % m; }

template <typename T>
Tensor<T> as_batch(const Tensor<T>& x) {
  if (x.ndim() == 3) return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.ndim() == 4) return x;
  throw ConfigError("expected C x H x W or N x C x H x W, got " + shape_str(x.shape()));
}

template <typename T>
Tensor<T> clamp01(Tensor<T> x) {
  for (auto& v : x.span()) v = std::min(std::max(v, T(0)), T(1));
  return x;
}

template <typename T>
Tensor<T> Backbone<T>::denoise_image(const Tensor<T>& frames) const {
  NoGradGuard guard;
  const Tensor<T> x = as_batch(frames);
  const int64_t H = x.dim(2), W = x.dim(3);
  Var<T> in(reflect_pad(x, pad_to_multiple(H), pad_to_multiple(W)));
  Tensor<T> out = crop(forward(in).value(), 0, 0, H, W);
  out = clamp01(std::move(out));
  return frames.ndim() == 3 ? out.reshaped(frames.shape()) : out;
}

template struct NafBlock<float>;
template struct NafBlock<double>;
template struct PlainBlock<float>;
template struct PlainBlock<double>;
template class Backbone<float>;
template class Backbone<double>;
template void check_finite(const Var<float>&, const std::string&);
template void check_finite(const Var<double>&, const std::string&);
template Tensor<float> as_batch(const Tensor<float>&);
template Tensor<double> as_batch(const Tensor<double>&);
template Tensor<float> clamp01(Tensor<float>);
template Tensor<double> clamp01(Tensor<double>);

}  // namespace tap
